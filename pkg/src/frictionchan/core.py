"""Uniform momentum/position grids, states on them, and transforms.

Conventions
-----------
Momentum samples are ``p_j = (j - c) dp`` with ``c = n // 2`` and
``dp = 2 p_max / n``; the conjugate positions are ``x_k = (k - c) dx`` with
``dx = 2 pi hbar / (n dp)``.  The unitary DFT linking the two is

    F[k, j] = exp(i p_j x_k / hbar) / sqrt(n),

so that a momentum amplitude vector ``v = psi * sqrt(dp)`` maps to the
position amplitude vector ``F v = phi * sqrt(dx)``.  Density matrices are
stored as kernels ``rho(p, p')`` with ``trace(rho) dp = 1``; the "discrete"
matrix ``R = rho dp`` has unit trace and is what linear algebra acts on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla

from .errors import PreconditionError

__all__ = [
    "Grid",
    "GridState",
    "WavefunctionState",
    "HamiltonianSpec",
    "CharFunction",
    "make_grid",
    "gaussian_state",
    "gaussian_density",
    "expectation",
    "char_function",
    "state_from_char",
    "wigner",
    "char_from_wigner",
    "trace_norm",
    "p2x",
    "x2p",
    "dm_p2x",
    "dm_x2p",
]


@dataclass(frozen=True)
class Grid:
    """Uniform momentum grid and its FFT-conjugate position grid."""

    n_points: int
    p_max: float
    hbar: float = 1.0

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 8:
            raise ValueError(f"n_points must be an integer >= 8, got {self.n_points}")
        if not self.p_max > 0:
            raise ValueError(f"p_max must be positive, got {self.p_max}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        n = int(self.n_points)
        if n & (n - 1):
            warnings.warn(
                f"n_points={n} is not a power of two; FFTs will be slower",
                stacklevel=3,
            )

    @property
    def n(self) -> int:
        return int(self.n_points)

    @property
    def center(self) -> int:
        return self.n // 2

    @property
    def dp(self) -> float:
        return 2.0 * self.p_max / self.n

    @property
    def dx(self) -> float:
        return 2.0 * np.pi * self.hbar / (self.n * self.dp)

    @property
    def length(self) -> float:
        """Period of the position grid."""
        return self.n * self.dx

    @cached_property
    def p(self) -> np.ndarray:
        a = (np.arange(self.n) - self.center) * self.dp
        a.setflags(write=False)
        return a

    @cached_property
    def x(self) -> np.ndarray:
        a = (np.arange(self.n) - self.center) * self.dx
        a.setflags(write=False)
        return a

    @cached_property
    def _shift_phase(self) -> np.ndarray:
        j = np.arange(self.n)
        s = np.exp(-2j * np.pi * self.center * j / self.n)
        s.setflags(write=False)
        return s

    @cached_property
    def _global_phase(self) -> complex:
        return np.exp(2j * np.pi * self.center**2 / self.n)

    @cached_property
    def x_matrix(self) -> np.ndarray:
        """Discrete position operator in the momentum basis, F^dag diag(x) F."""
        eye = np.eye(self.n, dtype=complex)
        fm = p2x(eye, self, axis=0)
        m = fm.conj().T @ (self.x[:, None] * fm)
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        return m

    def contains_momentum(self, p: float, margin: float = 0.0) -> bool:
        return abs(p) + margin <= self.p_max

    def contains_position(self, x: float, margin: float = 0.0) -> bool:
        return abs(x) + margin <= 0.5 * self.length


def make_grid(n_points: int, p_max: float, hbar: float = 1.0) -> Grid:
    """Build a :class:`Grid`; non-positive sizes raise ``ValueError``."""
    return Grid(n_points=n_points, p_max=p_max, hbar=hbar)


# ----------------------------------------------------------------------------
# transforms


def p2x(v: np.ndarray, grid: Grid, axis: int = -1) -> np.ndarray:
    """Apply the unitary DFT ``F`` along ``axis`` (momentum -> position)."""
    v = np.asarray(v, dtype=complex)
    shape = [1] * v.ndim
    shape[axis] = grid.n
    s = grid._shift_phase.reshape(shape)
    out = sfft.ifft(v * s, axis=axis, norm="ortho")
    return grid._global_phase * s * out


def x2p(u: np.ndarray, grid: Grid, axis: int = -1) -> np.ndarray:
    """Apply ``F^dag`` along ``axis`` (position -> momentum)."""
    u = np.asarray(u, dtype=complex)
    shape = [1] * u.ndim
    shape[axis] = grid.n
    s = grid._shift_phase.reshape(shape).conj()
    out = sfft.fft(u * s, axis=axis, norm="ortho")
    return np.conj(grid._global_phase) * s * out


def dm_p2x(r: np.ndarray, grid: Grid) -> np.ndarray:
    """``F R F^dag`` for a discrete density matrix ``R`` (or a stack of them)."""
    a = p2x(r, grid, axis=-2)
    return np.conj(p2x(np.conj(a), grid, axis=-1))


def dm_x2p(r: np.ndarray, grid: Grid) -> np.ndarray:
    """``F^dag R F``; inverse of :func:`dm_p2x`."""
    a = x2p(r, grid, axis=-2)
    return np.conj(x2p(np.conj(a), grid, axis=-1))


def eval_momentum_series(v: np.ndarray, grid: Grid, u: np.ndarray) -> np.ndarray:
    """Band-limited position wavefunction of discrete vector ``v`` at points ``u``.

    Returns ``phi(u) * sqrt(dx)`` so that at ``u = x_k`` it equals ``(F v)_k``.
    ``v`` may be a stack with the momentum index last.
    """
    u = np.asarray(u, dtype=float)
    e = np.exp(1j * np.outer(u, grid.p) / grid.hbar) / np.sqrt(grid.n)
    return np.asarray(v) @ e.T


def eval_position_series(w: np.ndarray, grid: Grid, s: np.ndarray) -> np.ndarray:
    """Band-limited momentum amplitude of position vector ``w`` at momenta ``s``.

    Inverse counterpart of :func:`eval_momentum_series`: returns
    ``psi(s) * sqrt(dp)`` so that at ``s = p_j`` it equals ``(F^dag w)_j``.
    """
    s = np.asarray(s, dtype=float)
    e = np.exp(-1j * np.outer(s, grid.x) / grid.hbar) / np.sqrt(grid.n)
    return np.asarray(w) @ e.T


def trace_norm(a: np.ndarray) -> float:
    """Trace norm of a (discrete) matrix; Hermitian inputs use ``eigvalsh``."""
    a = np.asarray(a)
    if np.allclose(a, a.conj().T, atol=1e-14, rtol=0):
        return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (a + a.conj().T)))))
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))


# ----------------------------------------------------------------------------
# states


@dataclass
class WavefunctionState:
    """Pure state: momentum amplitudes ``psi(p_j)`` with ``sum |psi|^2 dp = 1``."""

    grid: Grid
    psi: np.ndarray

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != (self.grid.n,):
            raise ValueError(f"psi has shape {self.psi.shape}, expected ({self.grid.n},)")

    @property
    def vec(self) -> np.ndarray:
        return self.psi * np.sqrt(self.grid.dp)

    @classmethod
    def from_vec(cls, grid: Grid, v: np.ndarray) -> "WavefunctionState":
        return cls(grid, np.asarray(v, dtype=complex) / np.sqrt(grid.dp))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2) * self.grid.dp))

    def normalized(self) -> "WavefunctionState":
        return WavefunctionState(self.grid, self.psi / self.norm())

    def position_amplitudes(self) -> np.ndarray:
        """phi(x_k) on the position grid."""
        return p2x(self.vec, self.grid) / np.sqrt(self.grid.dx)

    def to_density(self) -> "GridState":
        v = self.vec
        return GridState.from_dm(self.grid, np.outer(v, v.conj()))

    def copy(self) -> "WavefunctionState":
        return WavefunctionState(self.grid, self.psi.copy())


@dataclass
class GridState:
    """Mixed state: kernel ``rho(p_j, p_k)`` with ``trace(rho) dp = 1``."""

    grid: Grid
    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        if self.rho.shape != (self.grid.n, self.grid.n):
            raise ValueError(
                f"rho has shape {self.rho.shape}, expected ({self.grid.n}, {self.grid.n})"
            )

    @property
    def dm(self) -> np.ndarray:
        """Discrete density matrix with unit trace."""
        return self.rho * self.grid.dp

    @classmethod
    def from_dm(cls, grid: Grid, r: np.ndarray) -> "GridState":
        return cls(grid, np.asarray(r, dtype=complex) / grid.dp)

    def copy(self) -> "GridState":
        return GridState(self.grid, self.rho.copy())

    def trace(self) -> float:
        return float(np.real(np.trace(self.rho)) * self.grid.dp)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the Hermitian part of the discrete matrix."""
        r = self.dm
        return float(np.linalg.eigvalsh(0.5 * (r + r.conj().T))[0])

    def check(self, herm_tol=1e-12, trace_tol=1e-10, pos_tol=1e-8, positivity=True) -> dict:
        """Return invariant diagnostics; raise ``PreconditionError`` on violation."""
        diag = {
            "hermiticity": self.hermiticity_error(),
            "trace": self.trace(),
        }
        if positivity:
            diag["min_eig"] = self.min_eigenvalue()
        herm_scale = max(1.0, float(np.max(np.abs(self.rho))))
        if diag["hermiticity"] > herm_tol * herm_scale:
            raise PreconditionError(f"state not Hermitian: {diag['hermiticity']:.3e}")
        if abs(diag["trace"] - 1.0) > trace_tol:
            raise PreconditionError(f"trace deviates from 1: {diag['trace']!r}")
        if positivity and diag["min_eig"] < -pos_tol:
            raise PreconditionError(f"state not positive: min eig {diag['min_eig']:.3e}")
        return diag

    def position_density(self) -> np.ndarray:
        """Diagonal of rho in the position basis, as a density in x."""
        rx = dm_p2x(self.dm, self.grid)
        return np.real(np.diag(rx)) / self.grid.dx


def _aliasing_guard(grid: Grid, x0: float, p0: float, sx: float, sp: float, nsig=4.0):
    if abs(p0) + nsig * sp >= grid.p_max:
        raise PreconditionError(
            f"momentum support |p0|+{nsig:g} sd = {abs(p0) + nsig * sp:.4g} exceeds p_max={grid.p_max:g}"
        )
    if abs(x0) + nsig * sx >= 0.5 * grid.length:
        raise PreconditionError(
            f"position support |x0|+{nsig:g} sd = {abs(x0) + nsig * sx:.4g} "
            f"exceeds half box {0.5 * grid.length:.4g}"
        )


def gaussian_state(grid: Grid, x0: float, p0c: float, width: float) -> WavefunctionState:
    """Minimum-uncertainty packet with ``Var(x) = width**2``."""
    if not width > 0:
        raise ValueError("width must be positive")
    sp = grid.hbar / (2.0 * width)
    _aliasing_guard(grid, x0, p0c, width, sp)
    p = grid.p
    psi = np.exp(-((p - p0c) ** 2) / (4 * sp**2) - 1j * p * x0 / grid.hbar)
    psi = psi / np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dp)
    return WavefunctionState(grid, psi)


def gaussian_density(
    grid: Grid,
    x0: float,
    p0: float,
    var_x: float,
    var_p: float,
    cov_xp: float = 0.0,
) -> GridState:
    """Gaussian (generally mixed) state with the given first and second moments.

    ``cov_xp`` is the symmetrised covariance ``<{x,p}>/2 - <x><p>``.  Requires
    ``var_x var_p - cov_xp**2 >= hbar**2 / 4``.
    """
    hbar = grid.hbar
    if var_x <= 0 or var_p <= 0:
        raise ValueError("variances must be positive")
    if var_x * var_p - cov_xp**2 < hbar**2 / 4 * (1 - 1e-12):
        raise ValueError("moments violate the uncertainty relation")
    _aliasing_guard(grid, x0, p0, np.sqrt(var_x), np.sqrt(var_p))
    p = grid.p
    pc = 0.5 * (p[:, None] + p[None, :]) - p0
    u = p[:, None] - p[None, :]
    cond_var = var_x - cov_xp**2 / var_p
    cond_mean = x0 + cov_xp / var_p * pc
    rho = (
        np.exp(-(pc**2) / (2 * var_p))
        / np.sqrt(2 * np.pi * var_p)
        * np.exp(-1j * u * cond_mean / hbar - cond_var * u**2 / (2 * hbar**2))
    )
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.real(np.trace(rho)) * grid.dp
    return GridState(grid, rho)


# ----------------------------------------------------------------------------
# Hamiltonians


@dataclass(frozen=True)
class HamiltonianSpec:
    """``H = p^2 / 2m + V(x)`` with ``V`` free, harmonic or tabulated on the x grid."""

    mass: float = 1.0
    potential: str = "free"
    omega: float = 0.0
    values: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.potential not in ("free", "harmonic", "tabulated"):
            raise ValueError(f"unknown potential {self.potential!r}")
        if self.omega < 0:
            raise ValueError("omega must be >= 0")
        if self.potential == "tabulated":
            if self.values is None:
                raise ValueError("tabulated potential requires values")
            arr = np.asarray(self.values)
            if np.iscomplexobj(arr) or not np.all(np.isfinite(arr)):
                raise ValueError("tabulated potential must be real and finite")
            object.__setattr__(self, "values", tuple(float(v) for v in arr))

    @classmethod
    def free(cls, mass=1.0):
        return cls(mass=mass, potential="free")

    @classmethod
    def harmonic(cls, omega, mass=1.0):
        return cls(mass=mass, potential="harmonic", omega=omega)

    @classmethod
    def tabulated(cls, values, mass=1.0):
        return cls(mass=mass, potential="tabulated", values=tuple(np.asarray(values, float)))

    def potential_on(self, grid: Grid) -> np.ndarray:
        if self.potential == "free":
            return np.zeros(grid.n)
        if self.potential == "harmonic":
            return 0.5 * self.mass * self.omega**2 * grid.x**2
        v = np.asarray(self.values, float)
        if v.shape != (grid.n,):
            raise ValueError(f"tabulated potential has {v.size} values, grid has {grid.n}")
        return v

    def frequency_scale(self, grid: Grid) -> float:
        """Characteristic angular frequency of the potential (0 for free motion)."""
        if self.potential == "free":
            return 0.0
        if self.potential == "harmonic":
            return float(self.omega)
        v = self.potential_on(grid)
        curv = (np.roll(v, -1) - 2 * v + np.roll(v, 1))[1:-1] / grid.dx**2
        return float(np.sqrt(max(np.max(curv), 0.0) / self.mass))

    def matrix(self, grid: Grid) -> np.ndarray:
        """Discrete Hamiltonian in the momentum basis."""
        h = np.diag(grid.p**2 / (2 * self.mass)).astype(complex)
        v = self.potential_on(grid)
        if np.any(v):
            eye = np.eye(grid.n, dtype=complex)
            fm = p2x(eye, grid, axis=0)
            h = h + fm.conj().T @ (v[:, None] * fm)
        return 0.5 * (h + h.conj().T)

    def eigh(self, grid: Grid):
        return sla.eigh(self.matrix(grid))


# ----------------------------------------------------------------------------
# expectation values

Observable = Union[str, np.ndarray]

_NAMED = {"1", "identity", "x", "p", "x2", "p2", "xp"}


def _observable_matrix(grid: Grid, obs: Observable, basis: Optional[str]) -> np.ndarray:
    n = grid.n
    if isinstance(obs, str):
        key = obs.replace("²", "2").replace("^2", "2").lower()
        if key in ("{x,p}/2", "sym_xp"):
            key = "xp"
        if key not in _NAMED:
            raise ValueError(f"unknown observable {obs!r}")
        xm = grid.x_matrix
        pm = np.diag(grid.p).astype(complex)
        if key in ("1", "identity"):
            return np.eye(n, dtype=complex)
        if key == "x":
            return xm
        if key == "p":
            return pm
        if key == "x2":
            return xm @ xm
        if key == "p2":
            return pm @ pm
        return 0.5 * (xm @ pm + pm @ xm)
    arr = np.asarray(obs)
    if arr.ndim == 1:
        if arr.shape != (n,):
            raise ValueError(f"diagonal observable has length {arr.size}, grid has {n}")
        if basis in (None, "p"):
            return np.diag(arr).astype(complex)
        if basis == "x":
            eye = np.eye(n, dtype=complex)
            fm = p2x(eye, grid, axis=0)
            return fm.conj().T @ (arr[:, None] * fm)
        raise ValueError(f"basis must be 'p' or 'x', got {basis!r}")
    if arr.shape != (n, n):
        raise ValueError(f"observable has shape {arr.shape}, expected ({n}, {n})")
    return arr


def expectation(state, observable: Observable, basis: Optional[str] = None) -> complex:
    """``tr(A rho)`` with the grid measure.

    ``observable`` is a name (``x``, ``p``, ``x2``, ``p2``, ``xp`` for
    ``{x,p}/2``, ``1``), a length-n array diagonal in ``basis`` ('p' default
    or 'x'), or an n×n matrix acting on discrete momentum vectors.
    """
    grid = state.grid
    a = _observable_matrix(grid, observable, basis)
    if isinstance(state, WavefunctionState):
        v = state.vec
        return complex(np.vdot(v, a @ v))
    return complex(np.sum(a * state.dm.T))


# ----------------------------------------------------------------------------
# phase-space representations


@dataclass
class CharFunction:
    """Values ``chi(P_d, X_l)`` on ``P_d = d dp`` and ``X_l`` = the position grid."""

    grid: Grid
    values: np.ndarray

    @property
    def P(self) -> np.ndarray:
        return self.grid.p

    @property
    def X(self) -> np.ndarray:
        return self.grid.x

    def at_origin(self) -> complex:
        c = self.grid.center
        return complex(self.values[c, c])

    def hermiticity_error(self) -> float:
        """max |chi(-P,-X) - conj chi(P,X)| over the symmetric index range."""
        v = self.values[1:, 1:] if self.grid.n % 2 == 0 else self.values
        return float(np.max(np.abs(v[::-1, ::-1] - v.conj())))


def _diag_index(n: int, c: int):
    d = (np.arange(n) - c)[:, None]
    j = np.arange(n)[None, :]
    i = j - d
    valid = (i >= 0) & (i < n)
    return np.clip(i, 0, n - 1), np.broadcast_to(j, (n, n)), valid


def char_function(state) -> CharFunction:
    """Characteristic function ``chi(P, X) = tr(rho exp(i(P x + X p)/hbar))``."""
    if isinstance(state, WavefunctionState):
        state = state.to_density()
    grid = state.grid
    n, c, hbar = grid.n, grid.center, grid.hbar
    r = state.dm
    i, j, valid = _diag_index(n, c)
    g = np.where(valid, r[i, j], 0.0)
    vals = p2x(g, grid, axis=-1) * np.sqrt(n)
    phase = np.exp(-0.5j * np.outer(grid.p, grid.x) / hbar)
    return CharFunction(grid, phase * vals)


def state_from_char(chi: CharFunction) -> GridState:
    """Inverse of :func:`char_function` (momentum coherences with |p-p'| < p_max)."""
    grid = chi.grid
    n, c, hbar = grid.n, grid.center, grid.hbar
    phase = np.exp(0.5j * np.outer(grid.p, grid.x) / hbar)
    g = x2p(chi.values * phase, grid, axis=-1) / np.sqrt(n)
    i, j, valid = _diag_index(n, c)
    r = np.zeros((n, n), dtype=complex)
    r[i[valid], j[valid]] = g[valid]
    return GridState.from_dm(grid, r)


def wigner(state) -> np.ndarray:
    """Wigner function ``W[k, j] = W(x_k, p_j)`` (real part; imaginary part ~ 0)."""
    return np.real(_wigner_complex(char_function(state)))


def _wigner_complex(chi: CharFunction) -> np.ndarray:
    grid = chi.grid
    n, hbar = grid.n, grid.hbar
    # sum over P (axis 0) with exp(-i P x / hbar): P_d x_k = 2 pi d (k - c) / n
    a = np.conj(p2x(np.conj(chi.values), grid, axis=0)) * np.sqrt(n)
    # sum over X (axis 1) with exp(-i X p / hbar)
    b = x2p(a, grid, axis=1) * np.sqrt(n)
    return b / (2 * np.pi * hbar * n)


def char_from_wigner(w: np.ndarray, grid: Grid) -> CharFunction:
    """Inverse of :func:`wigner` on the same grid."""
    n, hbar = grid.n, grid.hbar
    b = np.asarray(w, dtype=complex) * (2 * np.pi * hbar * n)
    a = p2x(b, grid, axis=1) / np.sqrt(n)
    vals = np.conj(x2p(np.conj(a), grid, axis=0)) / np.sqrt(n)
    return CharFunction(grid, vals)
