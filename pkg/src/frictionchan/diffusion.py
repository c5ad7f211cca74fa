"""Weak measurement-feedback limit: diffusion coefficients and the Caldeira-Leggett equation.

The diffusion master equation reads

    d rho/dt = -i[H - F x, rho]/hbar
               - Gamma (A [p,[p,rho]] + i B [x,{p,rho}] + C [x,[x,rho]]).

Its completely positive form uses ``l = a x + i b p`` with ``b^2 = 4A`` and
``ab = 2B``.  An extra position Lindblad ``c x`` carries any excess ``C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .channel import ChannelSpec
from .core import GridState, HamiltonianSpec, WavefunctionState, trace_norm
from .distributions import (
    FeedbackLaw,
    MeasurementDistribution,
    conjugate_nu,
    expect_mu,
)
from .dynamics import EvolutionResult, _coherent_propagator, _energy, _n_steps, evolve_master
from .errors import PreconditionError
from .moments import moments_of

__all__ = [
    "DiffusionCoefficients",
    "diffusion_coefficients",
    "CaldeiraLeggettSpec",
    "caldeira_leggett_lindblads",
    "abc_generator",
    "cl_generator",
    "evolve_CL",
    "DiffusionComparison",
    "compare_full_vs_diffusion",
]


@dataclass(frozen=True)
class DiffusionCoefficients:
    """Drift force F and diffusion coefficients A, B, C (scalars in 1D, 3x3 in 3D).

    ``A_hess`` and ``A_nu`` are the two independent evaluations of ``A``.
    """

    F: Union[float, np.ndarray]
    A: Union[float, np.ndarray]
    B: Union[float, np.ndarray]
    C: Union[float, np.ndarray]
    A_hess: Union[float, np.ndarray] = field(repr=False, default=None)
    A_nu: Union[float, np.ndarray] = field(repr=False, default=None)
    dims: int = 1

    def as_dict(self) -> dict:
        conv = lambda v: np.asarray(v).tolist()  # noqa: E731
        return {k: conv(getattr(self, k)) for k in ("F", "A", "B", "C", "A_hess", "A_nu")}


# ----------------------------------------------------------------------------
# coefficients


def _log_hessian_expectation(q: np.ndarray, mu: np.ndarray) -> float:
    """E_mu[d^2 ln mu / dq^2] by 5-point central differences on the native table."""
    h = q[1] - q[0]
    tiny = 1e-280
    ok = mu > tiny
    lm = np.log(np.where(ok, mu, 1.0))
    d2 = (-lm[4:] + 16 * lm[3:-1] - 30 * lm[2:-2] + 16 * lm[1:-3] - lm[:-4]) / (12 * h**2)
    valid = ok[4:] & ok[3:-1] & ok[2:-2] & ok[1:-3] & ok[:-4]
    return float(np.sum(np.where(valid, mu[2:-2] * d2, 0.0)) * h)


def _feedback_slope_expectation(mu: MeasurementDistribution, f: FeedbackLaw, axis: int = 0) -> float:
    """E_mu[f'(q)] for the 1D feedback laws."""
    if f.kind == "linear":
        return f.alpha
    if f.kind == "constant":
        # f = alpha sign(q) has f' = 2 alpha delta(q)
        return float(2 * f.alpha * mu.marginal(axis).pdf(np.array(0.0)))
    if f.kind == "quadratic":
        return 2 * f.alpha * expect_mu(mu, np.abs, axis=axis)
    slopes = np.diff(f.values) / np.diff(f.q)

    def fprime(q):
        k = np.searchsorted(f.q, q, side="right") - 1
        inside = (k >= 0) & (k < slopes.size)
        return np.where(inside, slopes[np.clip(k, 0, slopes.size - 1)], 0.0)

    return expect_mu(mu, fprime, axis=axis)


def _coefficients_1d(mu: MeasurementDistribution, f: FeedbackLaw, Gamma: float, axis: int = 0):
    hbar = mu.hbar
    m = mu.marginal(axis)
    if m.is_gaussian:
        s = m.sigma[0]
        a_hess = 1.0 / (8 * s**2)
    else:
        a_hess = -_log_hessian_expectation(m.q, m.values) / 8
    a_nu = conjugate_nu(m).moment(2) / (2 * hbar**2)
    if f.kind == "linear":
        b = m.bias[0] if m.is_gaussian else expect_mu(m, lambda q: q)
        ef = f.alpha * b
        ef2 = f.alpha**2 * expect_mu(m, lambda q: q**2)
        if m.is_gaussian:
            ef2 = f.alpha**2 * (m.sigma[0] ** 2 + m.bias[0] ** 2)
    else:
        ef = expect_mu(m, f.evaluate)
        ef2 = expect_mu(m, lambda q: f.evaluate(q) ** 2)
    B = _feedback_slope_expectation(m, f) / (2 * hbar)
    C = ef2 / (2 * hbar**2)
    return Gamma * ef, a_hess, a_nu, B, C


def _coefficients_3d(mu: MeasurementDistribution, f: FeedbackLaw, Gamma: float, n_nodes: int = 40):
    if not mu.is_gaussian:
        raise PreconditionError("3D diffusion coefficients need a Gaussian mu")
    hbar = mu.hbar
    s = np.asarray(mu.sigma)
    b = np.asarray(mu.bias)
    a_hess = np.diag(1.0 / (8 * s**2))
    a_nu = np.diag([conjugate_nu(mu, axis=j).moment(2) / (2 * hbar**2) for j in range(3)])
    if f.kind == "linear":
        F = Gamma * f.alpha * b
        B = np.eye(3) * f.alpha / (2 * hbar)
        C = f.alpha**2 * (np.diag(s**2) + np.outer(b, b)) / (2 * hbar**2)
        return F, a_hess, a_nu, B, C
    # tensor Gauss-Hermite quadrature for central nonlinear laws
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    Z = np.stack(np.meshgrid(z, z, z, indexing="ij"), axis=-1).reshape(-1, 3)
    W = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    Q = b + Z * s
    fq = f.evaluate(Q)
    F = Gamma * (W @ fq)
    C = (fq * W[:, None]).T @ fq / (2 * hbar**2)
    jac = np.zeros((3, 3))
    for k in range(3):
        h = 1e-5 * s[k]
        dq = np.zeros(3)
        dq[k] = h
        jac[:, k] = W @ ((f.evaluate(Q + dq) - f.evaluate(Q - dq)) / (2 * h))
    B = jac / (2 * hbar)
    return F, a_hess, a_nu, B, C


def diffusion_coefficients(
    mu: MeasurementDistribution, f: FeedbackLaw, Gamma: float = 1.0, tol: float = 1e-6
) -> DiffusionCoefficients:
    """Drift and diffusion coefficients of the weak channel limit.

    ``A`` is evaluated both from the log-Hessian of mu and from the second
    moment of nu; their relative mismatch must stay below ``tol``.
    """
    if mu.dims == 1:
        F, a_hess, a_nu, B, C = _coefficients_1d(mu, f, Gamma)
    else:
        F, a_hess, a_nu, B, C = _coefficients_3d(mu, f, Gamma)
    mismatch = np.max(np.abs(np.asarray(a_hess) - np.asarray(a_nu))) / np.max(np.abs(a_nu))
    if mismatch > tol:
        raise PreconditionError(
            f"log-Hessian and nu forms of A disagree (relative {mismatch:.2e}); refine the mu table"
        )
    return DiffusionCoefficients(F, a_nu, B, C, A_hess=a_hess, A_nu=a_nu, dims=mu.dims)


# ----------------------------------------------------------------------------
# Lindblad form


@dataclass(frozen=True)
class CaldeiraLeggettSpec:
    """1D Caldeira-Leggett generator in Lindblad form.

    ``l = a x + i b p`` enters as ``(Gamma/2) D[l]``; ``c`` adds ``(Gamma/2) D[c x]``;
    ``drift`` is the constant force F.  The Hamiltonian correction
    ``kappa {x, p}`` with ``kappa = hbar Gamma a b / 4`` removes the spurious
    commutator left by ``D[l]``.
    """

    Gamma: float
    a: float
    b: float
    c: float = 0.0
    drift: float = 0.0
    hbar: float = 1.0

    def __post_init__(self):
        if self.Gamma < 0:
            raise ValueError("Gamma must be non-negative")

    @property
    def kappa(self) -> float:
        return self.hbar * self.Gamma * self.a * self.b / 4

    @property
    def lindblad_coefficients(self) -> tuple:
        """(a, b) of l = a x + i b p."""
        return self.a, self.b

    @property
    def hamiltonian_correction(self) -> float:
        """Coefficient of {x, p} added to H."""
        return self.kappa

    def abc(self) -> tuple:
        """(A, B, C) of the equivalent double-commutator form."""
        return self.b**2 / 4, self.a * self.b / 2, (self.a**2 + self.c**2) / 4

    @classmethod
    def from_coefficients(
        cls, coeffs: DiffusionCoefficients, Gamma: float, hbar: float = 1.0, tol: float = 1e-12
    ) -> "CaldeiraLeggettSpec":
        """Lindblad form with matched A, B, C and F; requires A C >= B^2 / 4."""
        if coeffs.dims != 1:
            raise PreconditionError("grid Caldeira-Leggett evolution is 1D only")
        A, B, C = float(coeffs.A), float(coeffs.B), float(coeffs.C)
        if A <= 0:
            raise PreconditionError("A must be positive")
        b = 2 * math.sqrt(A)
        a = 2 * B / b
        c2 = 4 * C - a**2
        if c2 < -tol * max(1.0, 4 * C):
            raise PreconditionError(
                f"diffusion coefficients violate A C >= B^2/4 (A={A:.4g}, B={B:.4g}, C={C:.4g})"
            )
        return cls(Gamma, a, b, math.sqrt(max(c2, 0.0)), float(coeffs.F), hbar)


def caldeira_leggett_lindblads(Gamma: float, alpha: float, sigma: float, hbar: float = 1.0):
    """Linear friction with Gaussian mu: l = alpha sqrt(2) sigma x / hbar + i p / (sqrt(2) sigma)."""
    if not sigma > 0 or not alpha > 0:
        raise PreconditionError("caldeira_leggett_lindblads needs sigma > 0 and alpha > 0")
    return CaldeiraLeggettSpec(
        Gamma, alpha * math.sqrt(2) * sigma / hbar, 1.0 / (math.sqrt(2) * sigma), hbar=hbar
    )


class _Operators:
    def __init__(self, grid):
        self.X = np.array(grid.x_matrix)
        self.p = np.array(grid.p)
        self.P = np.diag(self.p).astype(complex)


def abc_generator(A: float, B: float, C: float, F: float, Gamma: float, grid):
    """Double-commutator form (dissipative part only) as a function of R."""
    ops = _Operators(grid)
    X, P, hbar = ops.X, ops.P, grid.hbar

    def comm(u, v):
        return u @ v - v @ u

    def gen(r):
        out = 1j / hbar * F * comm(X, r)
        out -= Gamma * A * comm(P, comm(P, r))
        out -= 1j * Gamma * B * comm(X, P @ r + r @ P)
        out -= Gamma * C * comm(X, comm(X, r))
        return out

    return gen


def cl_generator(spec: CaldeiraLeggettSpec, grid, H: Optional[HamiltonianSpec] = None):
    """Lindblad-form generator as a function of R; ``H=None`` omits the bare Hamiltonian."""
    ops = _Operators(grid)
    X, P, hbar = ops.X, ops.P, grid.hbar
    h = spec.kappa * (X @ P + P @ X) - spec.drift * X
    if H is not None:
        h = h + H.matrix(grid)
    ell = spec.a * X + 1j * spec.b * P
    lx = spec.c * X
    keff = -1j / hbar * h - 0.25 * spec.Gamma * (ell.conj().T @ ell + lx.conj().T @ lx)
    ell_h = ell.conj().T
    lx_h = lx.conj().T
    g2 = 0.5 * spec.Gamma

    def gen(r):
        out = keff @ r + r @ keff.conj().T
        return out + g2 * (ell @ r @ ell_h + lx @ r @ lx_h)

    gen.norm_bound = float(
        np.linalg.norm(keff, 2) * 2 + g2 * (np.linalg.norm(ell, 2) ** 2 + np.linalg.norm(lx, 2) ** 2)
    )
    return gen


# ----------------------------------------------------------------------------
# integration


def evolve_CL(
    H: HamiltonianSpec,
    cl: CaldeiraLeggettSpec,
    rho0: Union[GridState, WavefunctionState],
    t_final: float,
    dt: float,
    sample_every: int = 1,
    store_states: bool = False,
) -> EvolutionResult:
    """Strang splitting: exact coherent half steps around RK4 sub-steps of the CL part."""
    state = rho0.to_density() if isinstance(rho0, WavefunctionState) else rho0.copy()
    grid = state.grid
    if cl.Gamma * dt > 0.1 + 1e-12:
        raise PreconditionError(f"Gamma*dt = {cl.Gamma * dt:.4g} exceeds 0.1")
    w = H.frequency_scale(grid)
    if w * dt > 0.1 + 1e-12:
        raise PreconditionError(f"omega*dt = {w * dt:.4g} exceeds 0.1")
    n_steps, dt = _n_steps(t_final, dt)
    u_half = _coherent_propagator(H, grid, 0.5 * dt, "exact")
    gen = cl_generator(cl, grid)
    n_sub = max(1, int(math.ceil(dt * gen.norm_bound / 0.5)))
    h = dt / n_sub
    hmat = H.matrix(grid)

    def rk4(r):
        k1 = gen(r)
        k2 = gen(r + 0.5 * h * k1)
        k3 = gen(r + 0.5 * h * k2)
        k4 = gen(r + h * k3)
        return r + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    r = state.dm
    tr0 = np.trace(r).real
    times, moms, energy, snaps = [0.0], [moments_of(state)], [_energy(hmat, r)], []
    if store_states:
        snaps.append(state.copy())
    for step in range(1, n_steps + 1):
        r = u_half @ r @ u_half.conj().T
        if cl.Gamma > 0 or cl.drift != 0:
            for _ in range(n_sub):
                r = rk4(r)
        r = u_half @ r @ u_half.conj().T
        r = 0.5 * (r + r.conj().T)
        if step % sample_every == 0 or step == n_steps:
            st = GridState.from_dm(grid, r)
            times.append(step * dt)
            moms.append(moments_of(st))
            energy.append(_energy(hmat, r))
            if store_states:
                snaps.append(st)
    drift = abs(np.trace(r).real - tr0)
    if drift > 1e-8:
        raise PreconditionError(f"trace drifted by {drift:.3e} during the run")
    return EvolutionResult(
        np.array(times),
        moms,
        np.array(energy),
        states=snaps if store_states else None,
        info={"dt": dt, "n_steps": n_steps, "substeps": n_sub, "trace_drift": drift},
    )


# ----------------------------------------------------------------------------
# comparison


@dataclass
class DiffusionComparison:
    """Full channel vs diffusion limit on the same grid and time samples."""

    times: np.ndarray
    full: EvolutionResult
    diffusion: EvolutionResult
    trace_distance: np.ndarray
    rel_error: dict
    coefficients: DiffusionCoefficients

    @property
    def max_rel_error(self) -> float:
        return float(max(np.max(v) for v in self.rel_error.values()))

    def as_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "trace_distance": self.trace_distance.tolist(),
            "rel_error": {k: v.tolist() for k, v in self.rel_error.items()},
            "max_rel_error": self.max_rel_error,
            "max_trace_distance": float(np.max(self.trace_distance)),
            "coefficients": self.coefficients.as_dict(),
        }


def compare_full_vs_diffusion(
    H: HamiltonianSpec,
    spec: ChannelSpec,
    rho0: Union[GridState, WavefunctionState],
    t_final: float,
    dt: float,
    sample_every: int = 1,
) -> DiffusionComparison:
    """Run the full channel and its matched diffusion limit side by side.

    Relative errors: <x^2> and <p^2> against their full-channel values, and
    <{x,p}> against 2 sqrt(<x^2><p^2>).
    """
    if spec.dims != 1:
        raise PreconditionError("the comparison runs on 1D grids only")
    coeffs = diffusion_coefficients(spec.mu, spec.feedback, Gamma=spec.rate)
    cl = CaldeiraLeggettSpec.from_coefficients(coeffs, spec.rate, hbar=spec.mu.hbar)
    full = evolve_master(H, spec, rho0, t_final, dt, sample_every=sample_every, store_states=True)
    diff = evolve_CL(H, cl, rho0, t_final, dt, sample_every=sample_every, store_states=True)
    td = np.array(
        [0.5 * trace_norm((a.rho - b.rho) * a.grid.dp) for a, b in zip(full.states, diff.states)]
    )
    fa, da = full.moment_array(), diff.moment_array()
    xx, xp, pp = fa[:, 2], fa[:, 3], fa[:, 4]
    rel = {
        "xx": np.abs(da[:, 2] - xx) / np.abs(xx),
        "pp": np.abs(da[:, 4] - pp) / np.abs(pp),
        "xp": np.abs(da[:, 3] - xp) / (2 * np.sqrt(xx * pp)),
    }
    return DiffusionComparison(full.times, full, diff, td, rel, coeffs)
