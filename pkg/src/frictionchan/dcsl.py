"""Dissipative CSL: parameter mapping, operator identity, mass scaling, bystander term.

The dCSL Lindblad operators coincide with the linear-friction Kraus operators
for a Gaussian mu with ``exp(-(w q)^2)`` profile, ``w = 2 k r_CSL / hbar``,
``alpha = 2k/(1+k)`` and ``Gamma = (m/m0)^2 gamma / [2 sqrt(pi) (1+k) r_CSL]^dims``.
Mass-scaled parameters are kept as exact fractions so composition laws can be
checked by equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelSpec, kraus_K_matrix
from .core import Grid, WavefunctionState, gaussian_state, p2x, trace_norm
from .distributions import FeedbackLaw, MeasurementDistribution, gaussian_mu
from .errors import PreconditionError, ValidityError

__all__ = [
    "DcslParams",
    "DcslMapping",
    "ScaledParams",
    "map_params",
    "kraus_K_kernel",
    "dcsl_B_operator",
    "verify_identity",
    "k_r_scaling",
    "scale_params",
    "critical_mass",
    "com_reduction",
    "BystanderResult",
    "bystander_cross_term",
]


def _frac(v) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(v)


def _exact_sqrt(q: Fraction) -> Fraction:
    """Square root of a rational that is a perfect square."""
    n, d = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if n * n != q.numerator or d * d != q.denominator:
        raise ValueError(f"{q} is not the square of a rational")
    return Fraction(n, d)


@dataclass(frozen=True)
class DcslParams:
    """dCSL parameters: rate density gamma, length r_csl, dissipation k, masses m and m0."""

    gamma: float
    r_csl: float
    k: float
    m: float = 1.0
    m0: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "r_csl", "m", "m0", "hbar"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive")
        if self.k < 0:
            raise PreconditionError("k must be non-negative")

    @property
    def alpha(self) -> float:
        return 2 * self.k / (1 + self.k)


@dataclass(frozen=True)
class DcslMapping:
    """Measurement-feedback parameters equivalent to a dCSL parameter set."""

    sigma: float
    alpha: float
    Gamma: float
    frictionless: bool = False

    def channel_spec(self, hbar: float = 1.0) -> ChannelSpec:
        if self.frictionless:
            raise PreconditionError("k = 0 has no measurement-feedback representation")
        return ChannelSpec(gaussian_mu(self.sigma, hbar=hbar), FeedbackLaw.linear(self.alpha), self.Gamma)


def map_params(params: DcslParams, dims: int = 3) -> DcslMapping:
    """(sigma, alpha, Gamma) of the equivalent channel; k = 0 is flagged as frictionless."""
    k, r, hbar = params.k, params.r_csl, params.hbar
    alpha = 2 * k / (1 + k)
    Gamma = (params.m / params.m0) ** 2 * params.gamma / (2 * math.sqrt(math.pi) * (1 + k) * r) ** dims
    if k == 0:
        return DcslMapping(math.inf, 0.0, Gamma, frictionless=True)
    sigma = hbar / (2 * math.sqrt(2) * k * r)
    return DcslMapping(sigma, alpha, Gamma)


# ----------------------------------------------------------------------------
# operator identity (1D analog)


def kraus_K_kernel(mu: MeasurementDistribution, alpha: float, y: float, grid: Grid) -> np.ndarray:
    """Discrete K(y) = (alpha/2 pi hbar)^1/2 int dq exp(i alpha q (y - x)/hbar) sqrt(mu(p - q)).

    Momentum kernel <p'|K|p> = (2 pi hbar alpha)^-1/2 exp(i(p - p')y/hbar)
    sqrt(mu(p - (p - p')/alpha)), times dp.
    """
    if not alpha > 0:
        raise PreconditionError("K(y) requires alpha > 0")
    hbar = grid.hbar
    p = grid.p
    pp, pq = np.meshgrid(p, p, indexing="ij")  # rows p', columns p
    ker = np.exp(1j * (pq - pp) * y / hbar) * mu.sqrt_pdf(pq - (pq - pp) / alpha)
    return ker * grid.dp / np.sqrt(2 * np.pi * hbar * alpha)


def _check_resolution(params: DcslParams, grid: Grid):
    width = params.hbar / ((1 + params.k) * params.r_csl)
    if grid.dp > 0.5 * width:
        raise PreconditionError(
            f"grid too coarse for r_CSL: dp = {grid.dp:.4g} exceeds half the kernel width {width:.4g}"
        )


def dcsl_B_operator(params: DcslParams, y: float, grid: Grid) -> np.ndarray:
    """Discrete 1D B(y) = m/(2 pi hbar) int dQ exp(iQ(x - y)/hbar) exp(-r^2 |(1+k)Q + 2kp|^2 / 2 hbar^2).

    On the momentum lattice exp(iQx/hbar) shifts p -> p + Q, so the Q integral
    collapses to the kernel <p'|B|p> with Q = p' - p.
    """
    _check_resolution(params, grid)
    hbar, k, r = params.hbar, params.k, params.r_csl
    p = grid.p
    pp, pq = np.meshgrid(p, p, indexing="ij")
    Q = pp - pq
    ker = np.exp(-1j * Q * y / hbar - (r**2 / (2 * hbar**2)) * ((1 + k) * Q + 2 * k * pq) ** 2)
    return ker * params.m * grid.dp / (2 * np.pi * hbar)


def verify_identity(params: DcslParams, grid: Grid, ys: Optional[Sequence[float]] = None) -> float:
    """Max relative |sqrt(Gamma) K(y) - sqrt(gamma)/m0 B(y)| over sample displacements."""
    mp = map_params(params, dims=1)
    if mp.frictionless:
        raise PreconditionError("k = 0: K(y) is undefined")
    if ys is None:
        ys = np.linspace(-0.25, 0.25, 5) * grid.length
    mu = gaussian_mu(mp.sigma, hbar=params.hbar)
    worst = 0.0
    for y in ys:
        lhs = math.sqrt(mp.Gamma) * kraus_K_kernel(mu, mp.alpha, float(y), grid)
        rhs = math.sqrt(params.gamma) / params.m0 * dcsl_B_operator(params, float(y), grid)
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))))
    return worst


# ----------------------------------------------------------------------------
# mass scaling


@dataclass(frozen=True)
class ScaledParams:
    """Mass-dependent channel parameters as exact fractions.

    ``width`` is w in mu(q) ~ exp(-(w q)^2), i.e. sigma = 1/(sqrt 2 w).
    """

    mass: Fraction
    m0: Fraction
    Gamma: Fraction
    alpha: Fraction
    width: Fraction
    k: Fraction
    r_csl: Fraction
    hbar: Fraction = Fraction(1)

    @property
    def sigma(self) -> float:
        return math.inf if self.width == 0 else 1.0 / (math.sqrt(2) * float(self.width))

    @classmethod
    def from_dcsl(cls, params: DcslParams, dims: int = 3) -> "ScaledParams":
        k, r, hbar = _frac(params.k), _frac(params.r_csl), _frac(params.hbar)
        Gamma = _frac(map_params(params, dims=dims).Gamma)
        return cls(
            _frac(params.m), _frac(params.m0), Gamma, 2 * k / (1 + k), 2 * k * r / hbar, k, r, hbar
        )

    def mu(self, dims: int = 1) -> MeasurementDistribution:
        return gaussian_mu(self.sigma, dims=dims, hbar=float(self.hbar))

    def channel_spec(self, dims: int = 1) -> ChannelSpec:
        return ChannelSpec(self.mu(dims), FeedbackLaw.linear(float(self.alpha)), float(self.Gamma), dims=dims)

    def as_dict(self) -> dict:
        return {
            "mass": float(self.mass),
            "Gamma": float(self.Gamma),
            "alpha": float(self.alpha),
            "sigma": self.sigma,
            "k": float(self.k),
            "r_csl": float(self.r_csl),
        }


def k_r_scaling(k0, r0, m0, m) -> tuple:
    """k(m) = (m0/m) k0 / D and r(m) = D r0 with D = 1 + (1 - m0/m) k0.

    Exact for rational inputs; floats are evaluated in floating point.
    """
    if isinstance(k0, Rational) and isinstance(r0, Rational) and isinstance(m0, Rational) and isinstance(m, Rational):
        a = Fraction(m0) / Fraction(m)
        d = 1 + (1 - a) * Fraction(k0)
        return a * Fraction(k0) / d, d * Fraction(r0)
    a = m0 / m
    d = 1 + (1 - a) * k0
    return a * k0 / d, d * r0


def critical_mass(ref: ScaledParams) -> Fraction:
    """Mass below which alpha(m) >= 2."""
    return ref.mass * ref.alpha / 2


def scale_params(ref: ScaledParams, m) -> ScaledParams:
    """Parameters at mass m: Gamma ~ m^2, alpha ~ 1/m, mu(q; m) = (m0/m) mu0(m0 q / m)."""
    m = _frac(m)
    if not m > 0:
        raise PreconditionError("mass must be positive")
    a = ref.mass / m
    alpha = ref.alpha * a
    if alpha >= 2:
        mc = critical_mass(ref)
        raise ValidityError(
            f"alpha(m) = {float(alpha):.6g} >= 2 at m = {float(m):.6g}: friction turns into heating "
            f"below the critical mass {float(mc):.6g}",
            critical_mass=float(mc),
        )
    k, r = k_r_scaling(ref.k, ref.r_csl, ref.mass, m)
    out = ScaledParams(m, ref.m0, ref.Gamma / a**2, alpha, ref.width * a, k, r, ref.hbar)
    # the literature parametrisation must describe the same channel
    assert 2 * k / (1 + k) == alpha and 2 * k * r / ref.hbar == out.width
    return out


def com_reduction(masses: Sequence, ref: ScaledParams) -> ScaledParams:
    """Single centre-of-mass operator of a rigid point-like compound.

    Each constituent term turns into a Kraus operator with alpha_n m_n / M and
    width w_n m_n / M; with consistent scaling all terms coincide and the rates
    add as sqrt(Gamma_cm) = sum sqrt(Gamma_n).
    """
    ms = [_frac(m) for m in masses]
    if not ms or any(m <= 0 for m in ms):
        raise PreconditionError("masses must be positive")
    M = sum(ms)
    parts = [scale_params(ref, m) for m in ms]
    alphas = {p.alpha * p.mass / M for p in parts}
    widths = {p.width * p.mass / M for p in parts}
    if len(alphas) != 1 or len(widths) != 1:
        raise PreconditionError("constituent terms do not combine into a single operator")
    root = sum(_exact_sqrt(p.Gamma / ref.Gamma) for p in parts)
    alpha, width = alphas.pop(), widths.pop()
    k = alpha / (2 - alpha)
    r = width * ref.hbar / (2 * k) if k != 0 else ref.r_csl
    out = ScaledParams(M, ref.m0, ref.Gamma * root**2, alpha, width, k, r, ref.hbar)
    expected = scale_params(ref, M)
    if out != expected:
        raise AssertionError(f"centre-of-mass parameters {out} differ from scale_params(M) {expected}")
    return out


# ----------------------------------------------------------------------------
# bystander cross term


@dataclass
class BystanderResult:
    """Failure of reduced-state independence for two particles.

    ``cross_norm`` is ||D||_tr normalised by int |t(y)| (||[K, rho]|| + ||[K^dag, rho]||) dy,
    with D = int dy (t* [K1, rho1] - t [K1^dag, rho1]) and t(y) = tr{K2(y) rho2}.
    ``imbalance`` is ||D|| relative to the symmetric combination.
    ``control_norm`` is the same normalised norm for self-adjoint position Lindblads.
    """

    cross_norm: float
    imbalance: float
    control_norm: float
    raw_norm: float


def _cross_norms(kfun, r1, r2, ys, dy):
    d = np.zeros_like(r1)
    s = np.zeros_like(r1)
    scale = 0.0
    for y in ys:
        k1 = kfun(1, y)
        t = np.trace(kfun(2, y) @ r2)
        if abs(t) < 1e-300:
            continue
        c = k1 @ r1 - r1 @ k1
        k1h = k1.conj().T
        ch = k1h @ r1 - r1 @ k1h
        d += dy * (np.conj(t) * c - t * ch)
        s += dy * (np.conj(t) * c + t * ch)
        scale += dy * abs(t) * (trace_norm(c) + trace_norm(ch))
    nd = trace_norm(d)
    return nd / scale if scale > 0 else 0.0, nd / max(trace_norm(s), 1e-300), nd


def bystander_cross_term(
    spec1: ChannelSpec,
    spec2: ChannelSpec,
    rho1,
    x2: float,
    grid: Optional[Grid] = None,
    n_y: Optional[int] = None,
    control_width: Optional[float] = None,
) -> BystanderResult:
    """Cross term left by tracing out a sharply localised second particle at ``x2``.

    Particle 2 is a Gaussian packet of width 2 dx.  The control family uses
    K(y) = g(x - y)^1/2 with a Gaussian g, which is self-adjoint.
    """
    if isinstance(rho1, WavefunctionState):
        rho1 = rho1.to_density()
    grid = rho1.grid if grid is None else grid
    r1 = rho1.dm
    r2 = gaussian_state(grid, x2, 0.0, 2 * grid.dx).to_density().dm
    n_y = 2 * grid.n if n_y is None else n_y
    ys = (np.arange(n_y) - n_y // 2) * (grid.length / n_y)
    dy = grid.length / n_y
    specs = {1: spec1, 2: spec2}
    cache = {}

    def kfun(i, y):
        key = (i, float(y))
        if key not in cache:
            cache[key] = kraus_K_matrix(specs[i], float(y), grid, with_parity=True)
        return cache[key]

    cross, imb, raw = _cross_norms(kfun, r1, r2, ys, dy)

    w = spec1.mu.hbar / (2 * spec1.mu.sigma[0]) if control_width is None else control_width
    eye = np.eye(grid.n, dtype=complex)
    fm = p2x(eye, grid, axis=0)

    def kctrl(i, y):
        g = np.exp(-((grid.x - y) ** 2) / (4 * w**2)) / (2 * np.pi * w**2) ** 0.25
        m = fm.conj().T @ (g[:, None] * fm)
        return 0.5 * (m + m.conj().T)

    control, _, _ = _cross_norms(kctrl, r1, r2, ys, dy)
    return BystanderResult(cross, imb, control, raw)
