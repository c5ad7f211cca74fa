"""The measurement-feedback channel in momentum (L) and position (K) Kraus form.

L(q) = exp(-i f(q) x / hbar) sqrt(mu(p - q)).  Outcomes q are integrated on a
lattice aligned with the momentum grid (q_m = m dp), so sqrt(mu(p_j - q_m)) is a
single 1D table; the kick exp(-i f x / hbar) is an exact phase in the position
basis.

For linear feedback f(q) = alpha q the same channel has position-measurement
Kraus operators

    (K(y) phi)(x) = sqrt(alpha) nu~(alpha (x - y)) phi((1 - alpha) x + alpha y),

with nu~ the Fourier amplitude of sqrt(mu).  For alpha > 1 the sign of
(1 - alpha) carries the parity; replacing it by |1 - alpha| removes the parity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import (
    Grid,
    GridState,
    WavefunctionState,
    dm_p2x,
    dm_x2p,
    eval_momentum_series,
    eval_position_series,
    p2x,
    x2p,
)
from .distributions import (
    FeedbackLaw,
    MeasurementDistribution,
    conjugate_nu,
    dist_moment,
    nu_amplitude,
)
from .errors import PreconditionError, UnsupportedClosureError
from .moments import MomentState, MomentState3D

__all__ = [
    "ChannelSpec",
    "GridChannel",
    "apply_L",
    "apply_channel",
    "sample_outcome",
    "kraus_K_matrix",
    "apply_K",
    "apply_channel_via_K",
    "squeeze",
    "parity",
    "translate",
    "adjoint_moment_map",
    "adjoint_momentum_function",
    "random_displacement_channel",
]

State = Union[GridState, WavefunctionState]

_MU_REL = 1e-12  # mu support threshold relative to its maximum
_STATE_REL = 1e-14  # momentum population threshold defining a state's support
_EIG_REL = 1e-14  # eigenvalues below this fraction of the largest are dropped


@dataclass(frozen=True)
class ChannelSpec:
    """Measurement density, feedback law, rate Gamma and dimensionality."""

    mu: MeasurementDistribution
    feedback: FeedbackLaw
    rate: float = 1.0
    dims: Optional[int] = None

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rate must be >= 0")
        dims = self.mu.dims if self.dims is None else self.dims
        if dims != self.mu.dims:
            raise ValueError(f"dims={dims} inconsistent with mu.dims={self.mu.dims}")
        if dims == 3 and self.feedback.kind == "tabulated":
            raise ValueError("tabulated feedback is 1D only")
        object.__setattr__(self, "dims", dims)

    @property
    def alpha(self) -> float:
        if not self.feedback.is_linear:
            raise UnsupportedClosureError("alpha is defined for linear feedback only")
        return self.feedback.alpha

    @property
    def hbar(self) -> float:
        return self.mu.hbar

    def with_rate(self, rate: float) -> "ChannelSpec":
        return ChannelSpec(self.mu, self.feedback, rate, self.dims)


def _check_1d(spec: ChannelSpec):
    if spec.dims != 1:
        raise PreconditionError("grid channel operations are 1D only")


def _momentum_support(grid: Grid, pop: np.ndarray) -> tuple:
    idx = np.nonzero(pop > _STATE_REL * pop.max())[0]
    return int(idx[0]), int(idx[-1])


def _eig_lowrank(r: np.ndarray):
    w, v = np.linalg.eigh(0.5 * (r + r.conj().T))
    keep = np.abs(w) > _EIG_REL * np.abs(w).max()
    return w[keep], v[:, keep]


class GridChannel:
    """A :class:`ChannelSpec` bound to a grid, with cached lattice tables."""

    def __init__(self, spec: ChannelSpec, grid: Grid):
        _check_1d(spec)
        if abs(spec.hbar - grid.hbar) > 1e-15:
            raise ValueError("mu and grid use different hbar")
        self.spec = spec
        self.grid = grid
        dp = grid.dp
        s_lo, s_hi = spec.mu.support(_MU_REL)
        self.kmin = int(np.floor(s_lo / dp)) - 1
        self.kmax = int(np.ceil(s_hi / dp)) + 1
        sm = spec.mu.on_lattice(dp, self.kmin, self.kmax)
        mass = np.sum(sm**2) * dp
        if abs(mass - 1.0) > 1e-6:
            raise PreconditionError(
                f"mu under-resolved by the grid: lattice mass {mass:.8f} (dp={dp:g})"
            )
        # discrete normalisation makes the lattice POVM complete to rounding error
        self.sqrt_mu = sm / np.sqrt(mass)
        self.norm_factor = 1.0 / np.sqrt(mass)
        self._cache = {}

    # -- lattice helpers ----------------------------------------------------

    def q_range(self, jlo: int, jhi: int) -> np.ndarray:
        """Lattice indices m (q = m dp) reaching momentum indices [jlo, jhi]."""
        c = self.grid.center
        return np.arange(jlo - c - self.kmax, jhi - c - self.kmin + 1)

    def m_columns(self, m: np.ndarray) -> np.ndarray:
        """sqrt(mu(p_j - q_m)) as an array of shape (len(m), n)."""
        c = self.grid.center
        k = np.arange(self.grid.n)[None, :] - c - np.asarray(m)[:, None] - self.kmin
        ok = (k >= 0) & (k < self.sqrt_mu.size)
        return np.where(ok, self.sqrt_mu[np.clip(k, 0, self.sqrt_mu.size - 1)], 0.0)

    def kicks(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(self.spec.feedback.evaluate(np.asarray(q, float)), float)

    def lost_weight(self, m: np.ndarray, pop: np.ndarray) -> tuple:
        """Probability kicked outside the momentum grid, and the worst outcome q."""
        grid = self.grid
        cols, _ = self._tables(m)
        f = self.kicks(m * grid.dp)
        shifted = grid.p[None, :] - f[:, None]
        out = (shifted < grid.p[0] - 1e-12) | (shifted > grid.p[-1] + 1e-12)
        per_q = np.sum(np.where(out, cols**2 * pop[None, :], 0.0), axis=1) * grid.dp
        k = int(np.argmax(per_q))
        return float(per_q.sum()), float(m[k] * grid.dp)

    def _check_shift(self, m: np.ndarray, pop: np.ndarray, tol: float = 1e-10):
        lost, q = self.lost_weight(m, pop)
        if lost > tol:
            raise PreconditionError(
                f"insufficient momentum coverage: probability {lost:.3e} is kicked "
                f"outside the grid (worst outcome q={q:.4g}, p_max={self.grid.p_max:g})"
            )

    # -- single Kraus operators ---------------------------------------------

    def sqrt_mu_at(self, q: float) -> np.ndarray:
        """sqrt(mu(p_j - q)) for an arbitrary outcome q."""
        m = q / self.grid.dp
        if abs(m - round(m)) < 1e-12:
            return self.m_columns(np.array([int(round(m))]))[0]
        return self.spec.mu.sqrt_pdf(self.grid.p - q) * self.norm_factor

    def L_vec(self, q: float, v: np.ndarray) -> np.ndarray:
        """L(q) applied to discrete momentum vectors (last axis)."""
        a = self.sqrt_mu_at(q) * v
        f = float(self.kicks(np.array([q]))[0])
        ph = np.exp(-1j * f * self.grid.x / self.grid.hbar)
        return x2p(ph * p2x(a, self.grid), self.grid)

    # -- the full channel -----------------------------------------------------

    def outcome_density(self, v: np.ndarray) -> tuple:
        """(q lattice, P(q)) with P(q) = sum_j mu(p_j - q) |v_j|^2 ; sum P dp = 1."""
        pop = np.abs(v) ** 2
        jlo, jhi = _momentum_support(self.grid, pop)
        m = self.q_range(jlo, jhi)
        cols = self.m_columns(m)
        return m * self.grid.dp, (cols**2) @ pop

    def apply(self, r: np.ndarray, method: str = "auto") -> np.ndarray:
        """Lambda applied to a discrete density matrix ``R`` (unit trace)."""
        grid = self.grid
        pop = np.abs(np.real(np.diag(r)))
        jlo, jhi = _momentum_support(grid, pop)
        m = self.q_range(jlo, jhi)
        self._check_shift(m, pop / max(pop.sum(), 1e-300))
        if method == "auto":
            if self.spec.feedback.is_linear:
                method = "linear"
            else:
                w, _ = _eig_lowrank(r) if grid.n >= 128 else (np.empty(grid.n), None)
                method = "lowrank" if w.size <= max(4, int(np.log2(grid.n))) else "dense"
        if method == "linear":
            out_x = self._apply_linear(r)
        elif method == "lowrank":
            out_x = self._apply_lowrank(r, m)
        elif method == "dense":
            out_x = self._apply_dense(r, m)
        else:
            raise ValueError(f"unknown method {method!r}")
        out = dm_x2p(out_x, grid)
        return 0.5 * (out + out.conj().T)

    def _apply_lowrank(self, r: np.ndarray, m: np.ndarray, chunk: int = 64) -> np.ndarray:
        grid = self.grid
        lam, vecs = _eig_lowrank(r)
        acc = np.zeros((grid.n, grid.n), dtype=complex)
        for lo in range(0, m.size, chunk):
            mm = m[lo : lo + chunk]
            cols, ph = self._tables(mm)  # (b, n), (b, n_x)
            a = cols[:, None, :] * vecs.T[None, :, :]  # (b, r, n)
            y = p2x(a, grid, axis=-1) * ph[:, None, :]
            y = y.reshape(-1, grid.n)
            wts = np.tile(lam * grid.dp, mm.size)
            acc += (y.T * wts) @ y.conj()
        return acc

    def _apply_dense(self, r: np.ndarray, m: np.ndarray, chunk: int = 16) -> np.ndarray:
        grid = self.grid
        acc = np.zeros((grid.n, grid.n), dtype=complex)
        for lo in range(0, m.size, chunk):
            mm = m[lo : lo + chunk]
            cols, ph = self._tables(mm)
            blk = cols[:, :, None] * r[None, :, :] * cols[:, None, :]
            blk = dm_p2x(blk, grid)
            blk *= ph[:, :, None]
            blk *= ph.conj()[:, None, :]
            acc += blk.sum(axis=0)
        return acc * grid.dp

    def _linear_tables(self) -> tuple:
        if "linear" not in self._cache:
            grid = self.grid
            n, dp, dx = grid.n, grid.dp, grid.dx
            alpha = self.spec.feedback.alpha
            d = np.arange(-(n - 1), n)
            k = np.arange(self.kmin, self.kmax + 1)
            idx = k[None, :] + d[:, None] - self.kmin
            ok = (idx >= 0) & (idx < k.size)
            sprod = self.sqrt_mu[None, :] * np.where(ok, self.sqrt_mu[np.clip(idx, 0, k.size - 1)], 0.0)
            delta = d * dx  # position differences x_k - x_l
            psi = sprod @ np.exp(1j * alpha * dp * np.outer(k, delta) / grid.hbar)
            eg = np.exp(1j * (1 - alpha) * np.outer(grid.p, delta) / grid.hbar)
            e3 = np.exp(-1j * dp * np.outer(d, grid.x) / grid.hbar)
            j = np.arange(n)
            col = j[None, :] + d[:, None]
            self._cache["linear"] = (psi, eg, e3, col, (col >= 0) & (col < n))
        return self._cache["linear"]

    def _apply_linear(self, r: np.ndarray) -> np.ndarray:
        """Linear feedback: the outcome sum collapses onto a precomputed kernel.

        With q_m = p_j - k dp the kick phase factorises, so that
        out_x[k, l] = dp/n sum_d exp(-i d dp x_l) Psi(d, x_k - x_l) G_d((1 - alpha)(x_k - x_l)),
        Psi(d, D) = sum_k s_k s_{k+d} exp(i alpha k dp D), G_d(u) = sum_j R[j, j+d] exp(i p_j u).
        This is the same lattice quadrature as the other routes, reordered.
        """
        grid = self.grid
        n = grid.n
        psi, eg, e3, col, ok = self._linear_tables()
        diag = np.where(ok, r[np.arange(n)[None, :], np.clip(col, 0, n - 1)], 0.0)
        h = psi * (diag @ eg)  # (d, delta)
        z = h.T @ e3  # (delta, l)
        kk = np.arange(n)[:, None] - np.arange(n)[None, :] + (n - 1)
        return z[kk, np.arange(n)[None, :]] * (grid.dp / n)

    def _tables(self, mm: np.ndarray) -> tuple:
        """(sqrt-mu columns, kick phases exp(-i f(q_m) x_k / hbar)) for lattice indices."""
        key = (int(mm[0]), int(mm[-1]), mm.size)
        hit = self._cache.get(key)
        if hit is None:
            grid = self.grid
            f = self.kicks(mm * grid.dp)
            hit = (self.m_columns(mm), np.exp(-1j * np.outer(f, grid.x) / grid.hbar))
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[key] = hit
        return hit


def _as_dm(state: State) -> np.ndarray:
    if isinstance(state, WavefunctionState):
        v = state.vec
        return np.outer(v, v.conj())
    return state.dm


# ----------------------------------------------------------------------------
# public L-representation API


def apply_L(spec: ChannelSpec, q: float, state: State, channel: Optional[GridChannel] = None):
    """Unnormalised post-measurement state L(q) psi, or L(q) rho L(q)^dag."""
    ch = channel or GridChannel(spec, state.grid)
    grid = state.grid
    f = float(ch.kicks(np.array([q]))[0])
    if isinstance(state, WavefunctionState):
        v = state.vec
    else:
        v = None
    sm = ch.sqrt_mu_at(q)
    pop = np.abs(v) ** 2 if v is not None else np.abs(np.real(np.diag(state.dm)))
    w = sm**2 * pop
    shifted = grid.p - f
    out = (shifted < grid.p[0] - 1e-12) | (shifted > grid.p[-1] + 1e-12)
    if w.sum() > 0 and np.sum(w[out]) > 1e-10 * max(w.sum(), 1e-300):
        raise PreconditionError(
            f"kick f(q)={f:.4g} shifts the state outside the momentum grid"
        )
    if v is not None:
        return WavefunctionState.from_vec(grid, ch.L_vec(q, v))
    ph = np.exp(-1j * f * grid.x / grid.hbar)
    r = sm[:, None] * state.dm * sm[None, :]
    rx = dm_p2x(r, grid) * ph[:, None] * ph.conj()[None, :]
    return GridState.from_dm(grid, dm_x2p(rx, grid))


def apply_channel(
    spec: ChannelSpec, state: GridState, channel: Optional[GridChannel] = None, method="auto"
) -> GridState:
    """Lambda[rho] by midpoint quadrature over the aligned outcome lattice."""
    if isinstance(state, WavefunctionState):
        state = state.to_density()
    ch = channel or GridChannel(spec, state.grid)
    return GridState.from_dm(state.grid, ch.apply(state.dm, method=method))


def sample_outcome(
    spec: ChannelSpec,
    psi: WavefunctionState,
    rng: np.random.Generator,
    channel: Optional[GridChannel] = None,
) -> float:
    """Draw q from P(q) = int dp mu(p - q) |psi(p)|^2 by inverse CDF.

    The CDF is piecewise linear between lattice midpoints, i.e. each lattice
    cell carries its quadrature weight uniformly.
    """
    ch = channel or GridChannel(spec, psi.grid)
    q, pq = ch.outcome_density(psi.vec)
    cdf = np.concatenate([[0.0], np.cumsum(pq)])
    cdf /= cdf[-1]
    edges = np.concatenate([q - 0.5 * psi.grid.dp, [q[-1] + 0.5 * psi.grid.dp]])
    u = rng.random()
    return float(np.interp(u, cdf, edges))


# ----------------------------------------------------------------------------
# position (K) representation


def _require_linear(spec: ChannelSpec) -> float:
    if not spec.feedback.is_linear:
        raise UnsupportedClosureError("the K representation needs linear feedback")
    alpha = spec.feedback.alpha
    if not alpha > 0:
        raise PreconditionError("the K representation is undefined for alpha <= 0")
    return alpha


def kraus_K_matrix(spec: ChannelSpec, y: float, grid: Grid, with_parity: bool = True) -> np.ndarray:
    """Discrete K(y) acting on momentum vectors, returning momentum vectors."""
    _check_1d(spec)
    alpha = _require_linear(spec)
    a = (1 - alpha) if with_parity else abs(1 - alpha)
    x = grid.x
    u = a * x + alpha * y
    amp = np.sqrt(alpha) * nu_amplitude(spec.mu, alpha * (x - y))
    e = np.exp(1j * np.outer(u, grid.p) / grid.hbar) / np.sqrt(grid.n)
    e[np.abs(u) > 0.5 * grid.length] = 0.0
    kxp = amp[:, None] * e
    return x2p(kxp, grid, axis=0)


def apply_K(spec: ChannelSpec, y: float, state: State, with_parity: bool = True):
    """Unnormalised K(y) psi or K(y) rho K(y)^dag."""
    k = kraus_K_matrix(spec, y, state.grid, with_parity)
    if isinstance(state, WavefunctionState):
        return WavefunctionState.from_vec(state.grid, k @ state.vec)
    return GridState.from_dm(state.grid, k @ state.dm @ k.conj().T)


def _sharp_channel(spec: ChannelSpec, r: np.ndarray, grid: Grid) -> np.ndarray:
    """alpha = 1: sharp position measurement followed by sqrt(mu(p))."""
    rx = dm_p2x(r, grid)
    d = np.real(np.diag(rx))
    sm = spec.mu.sqrt_pdf(grid.p)
    # n (F^dag diag(d) F)_{jj'} = sum_k d_k exp(-i (p_j - p_j') x_k / hbar)
    fdf = dm_x2p(np.diag(d).astype(complex), grid) * grid.n
    return sm[:, None] * sm[None, :] * grid.dp * fdf


def apply_channel_via_K(
    spec: ChannelSpec,
    state: GridState,
    with_parity: bool = True,
    oversample: int = 1,
    chunk: int = 256,
) -> GridState:
    """Lambda[rho] = int dy K(y) rho K(y)^dag by direct y-quadrature.

    The y lattice has spacing dx / (alpha * oversample); the state is evaluated
    at the off-grid points (1 - alpha) x + alpha y by band-limited series and
    masked outside the box to suppress periodic images.
    """
    if isinstance(state, WavefunctionState):
        state = state.to_density()
    _check_1d(spec)
    alpha = _require_linear(spec)
    grid = state.grid
    r = state.dm
    if alpha == 1.0 and with_parity:
        out = _sharp_channel(spec, r, grid)
        return GridState.from_dm(grid, 0.5 * (out + out.conj().T))
    a = (1 - alpha) if with_parity else abs(1 - alpha)
    x = grid.x
    half = 0.5 * grid.length
    lam, vecs = _eig_lowrank(r)

    # state support in position and nu amplitude support
    px = np.real(np.diag(dm_p2x(r, grid)))
    live = np.nonzero(px > _STATE_REL * px.max())[0]
    x_lo, x_hi = x[live[0]] - grid.dx, x[live[-1]] + grid.dx
    src = spec.mu.marginal()
    ymax = _nu_reach(src)

    step = grid.dx / oversample  # alpha * dy
    t_lo = min(a * x.min(), a * x.max()) + x_lo
    t_hi = max(a * x.min(), a * x.max()) + x_hi
    t = np.arange(np.floor(t_lo / step), np.ceil(t_hi / step) + 1) * step
    ok_nu = np.abs(alpha * x[None, :] - t[:, None]) <= ymax
    u = a * x[None, :] + t[:, None]
    ok_u = (u >= x_lo) & (u <= x_hi)
    t = t[np.any(ok_nu & ok_u, axis=1)]

    acc = np.zeros((grid.n, grid.n), dtype=complex)
    es = np.exp(1j * np.outer(a * x, grid.p) / grid.hbar) / np.sqrt(grid.n)  # (n_x, n_p)
    for lo in range(0, t.size, chunk):
        tb = t[lo : lo + chunk]
        et = np.exp(1j * np.outer(grid.p, tb) / grid.hbar)  # (n_p, b)
        z = vecs[:, :, None] * et[:, None, :]  # (n_p, r, b)
        phi = (es @ z.reshape(grid.n, -1)).reshape(grid.n, lam.size, tb.size)
        ub = a * x[:, None] + tb[None, :]
        mask = np.abs(ub) <= half
        nu = nu_amplitude(spec.mu, alpha * x[:, None] - tb[None, :])
        wgt = np.where(mask, nu, 0.0)  # (n_x, b)
        yv = (phi * wgt[:, None, :]).reshape(grid.n, -1)
        wts = np.repeat(lam, tb.size) * step
        acc += (yv * wts) @ yv.conj().T
    out = dm_x2p(acc, grid)
    return GridState.from_dm(grid, 0.5 * (out + out.conj().T))


def _nu_reach(mu: MeasurementDistribution, rel: float = 1e-9) -> float:
    """Radius beyond which |nu~| < rel * max|nu~|."""
    if mu.is_gaussian:
        return mu.hbar * np.sqrt(-np.log(rel)) / mu.sigma[0]
    nu = conjugate_nu(mu, check_resolved=False)
    amp = np.sqrt(np.maximum(nu.values, 0))
    idx = np.nonzero(amp > rel * amp.max())[0]
    return float(max(abs(nu.y[idx[0]]), abs(nu.y[idx[-1]])))


# ----------------------------------------------------------------------------
# squeezing, parity and translations


def _squeeze_matrix(alpha: float, grid: Grid) -> np.ndarray:
    s = abs(1 - alpha)
    if s == 0:
        raise PreconditionError("squeeze is undefined at alpha = 1")
    if s <= 1:
        # (S phi)(x) = sqrt(s) phi(s x): evaluate the momentum series at s x_k
        e = np.exp(1j * np.outer(s * grid.x, grid.p) / grid.hbar) / np.sqrt(grid.n)
        return x2p(np.sqrt(s) * e, grid, axis=0)
    # psi'(p) = psi(p / s) / sqrt(s): evaluate the position series at p_j / s
    e = np.exp(-1j * np.outer(grid.p / s, grid.x) / grid.hbar) / np.sqrt(grid.n)
    return (e / np.sqrt(s)) @ p2x(np.eye(grid.n), grid, axis=0)


def squeeze(alpha: float, state: State, tol: float = 1e-8) -> State:
    """S(alpha): x -> x / |1 - alpha|, p -> |1 - alpha| p, by band-limited rescaling."""
    grid = state.grid
    sm = _squeeze_matrix(alpha, grid)
    if isinstance(state, WavefunctionState):
        v = state.vec
        out = sm @ v
        n0, n1 = np.vdot(v, v).real, np.vdot(out, out).real
        res = WavefunctionState.from_vec(grid, out)
    else:
        out = sm @ state.dm @ sm.conj().T
        n0, n1 = np.trace(state.dm).real, np.trace(out).real
        res = GridState.from_dm(grid, 0.5 * (out + out.conj().T))
    if abs(n1 - n0) > tol * max(n0, 1e-300):
        raise PreconditionError(
            f"rescaled support exceeds the grid (norm {n0:.12g} -> {n1:.12g})"
        )
    return res


def parity(state: State) -> State:
    """x -> -x by exact index reversal (periodic grid)."""
    grid = state.grid
    idx = (2 * grid.center - np.arange(grid.n)) % grid.n
    if isinstance(state, WavefunctionState):
        return WavefunctionState(grid, state.psi[idx])
    return GridState(grid, state.rho[np.ix_(idx, idx)])


def translate(state: State, z: float) -> State:
    """Position translation exp(-i z p / hbar): phi(x) -> phi(x - z)."""
    grid = state.grid
    ph = np.exp(-1j * z * grid.p / grid.hbar)
    if isinstance(state, WavefunctionState):
        return WavefunctionState(grid, ph * state.psi)
    return GridState(grid, ph[:, None] * state.rho * ph.conj()[None, :])


def random_displacement_channel(mu: MeasurementDistribution, state: GridState) -> GridState:
    """int dy nu(y) T_y rho T_y^dag, with nu tabulated by :func:`conjugate_nu`."""
    grid = state.grid
    nu = conjugate_nu(mu)
    dpp = grid.p[:, None] - grid.p[None, :]
    flat = dpp.ravel()
    ker = np.empty(flat.shape, dtype=complex)
    for lo in range(0, flat.size, 4096):
        blk = flat[lo : lo + 4096]
        ker[lo : lo + 4096] = np.exp(-1j * np.outer(blk, nu.y) / grid.hbar) @ nu.values
    ker = ker.reshape(dpp.shape) * nu.dy
    return GridState(grid, state.rho * ker)


# ----------------------------------------------------------------------------
# adjoint-channel moment maps


def _gl_panels(lo: float, hi: float, n_panels: int, order: int = 10) -> tuple:
    """Composite Gauss-Legendre nodes and weights on [lo, hi]."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def adjoint_momentum_function(spec: ChannelSpec, F, p, n_panels: int = 96) -> np.ndarray:
    """Lambda^dag[F(p)] evaluated at momenta ``p``: E_mu(q)[F(p - f(p - q))].

    The q integral is split at q = p, where constant and quadratic feedback
    are not smooth, and each side uses composite Gauss-Legendre quadrature.
    """
    mu = spec.mu.marginal()
    p = np.atleast_1d(np.asarray(p, float))
    lo, hi = mu.support(_MU_REL)
    f = spec.feedback.evaluate
    out = np.empty(p.shape)
    for i, pi in enumerate(p):
        qs, w = [], []
        for a, b in ((lo, min(pi, hi)), (max(pi, lo), hi)):
            if b > a:
                k = max(4, int(np.ceil(n_panels * (b - a) / (hi - lo))))
                x, wx = _gl_panels(a, b, k)
                qs.append(x)
                w.append(wx)
        qq, ww = np.concatenate(qs), np.concatenate(w)
        out[i] = np.sum(ww * mu.pdf(qq) * F(pi - f(pi - qq)))
    return out


def adjoint_moment_map(spec: ChannelSpec, moments, p_marginal: Optional[tuple] = None):
    """One application of Lambda^dag to first and second moments.

    Linear feedback closes on (x, p, xx, {x,p}, pp) in 1D and on the full 3D
    block.  For other feedback laws only <x> and <p> are returned, and <p>
    needs the momentum distribution ``p_marginal = (p_samples, weights)``.
    """
    fb = spec.feedback
    if isinstance(moments, MomentState3D):
        if spec.dims != 3:
            raise ValueError("3D moments need a 3D channel")
        if not fb.is_linear:
            raise UnsupportedClosureError("3D moment closure needs linear feedback")
        return _adjoint_3d(spec, moments)
    if not fb.is_linear:
        if p_marginal is None:
            raise UnsupportedClosureError(
                f"{fb.kind} feedback: <p> needs the momentum distribution; "
                "second moments do not close"
            )
        ps, wts = p_marginal
        wts = np.asarray(wts, float) / np.sum(wts)
        newp = float(np.sum(wts * adjoint_momentum_function(spec, lambda z: z, ps)))
        return {"x": moments.x, "p": newp}
    mu = spec.mu.marginal()
    a = fb.alpha
    b = dist_moment(mu, 1)
    q2 = dist_moment(mu, 2)
    ey2 = conjugate_nu(mu).moment(2) if not mu.is_gaussian else mu.hbar**2 / (4 * mu.sigma[0] ** 2)
    m = moments
    return MomentState(
        x=m.x,
        p=(1 - a) * m.p + a * b,
        xx=m.xx + ey2,
        xp=(1 - a) * m.xp + 2 * a * b * m.x,
        pp=(1 - a) ** 2 * m.pp + 2 * a * (1 - a) * b * m.p + a**2 * q2,
    )


def _adjoint_3d(spec: ChannelSpec, m: MomentState3D) -> MomentState3D:
    mu = spec.mu
    a = spec.feedback.alpha
    if mu.is_gaussian:
        s = np.asarray(mu.sigma)
        b = np.asarray(mu.bias)
        N = np.diag(mu.hbar**2 / (4 * s**2))
        Q = np.diag(s**2) + np.outer(b, b)
    else:  # pragma: no cover - tabulated mu is 1D only
        raise UnsupportedClosureError("3D closure needs a Gaussian mu")
    return MomentState3D(
        x=m.x,
        p=(1 - a) * m.p + a * b,
        X=m.X + N,
        C=(1 - a) * m.C + 2 * a * np.outer(m.x, b),
        P=(1 - a) ** 2 * m.P + a * (1 - a) * (np.outer(m.p, b) + np.outer(b, m.p)) + a**2 * Q,
    )
