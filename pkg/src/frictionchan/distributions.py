"""Measurement densities mu, conjugate displacement densities nu, feedback laws."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import PreconditionError

__all__ = [
    "MeasurementDistribution",
    "DisplacementDistribution",
    "FeedbackLaw",
    "gaussian_mu",
    "tabulated_mu",
    "gaussian_mixture_mu",
    "conjugate_nu",
    "conjugate_nu_3d",
    "nu_amplitude",
    "dist_moment",
    "expect_mu",
    "uncertainty_product",
    "read_mu_csv",
    "write_mu_csv",
]

_TAIL_TOL = 1e-10
_GAUSS_SPAN = 14.0  # half-width of numerical Gaussian tables, in sigma


def _as_axes(v, dims, name):
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.size == 1:
        a = np.full(dims, float(a[0]))
    if a.shape != (dims,):
        raise ValueError(f"{name} must be a scalar or a length-{dims} vector")
    return a


@dataclass(frozen=True)
class MeasurementDistribution:
    """Probability density mu over momentum outcomes (real non-negative root).

    ``kind='gaussian'`` has per-axis ``sigma`` and ``bias``; ``kind='tabulated'``
    (1D only) holds values on a uniform ``q`` table.
    """

    kind: str
    dims: int = 1
    sigma: Optional[tuple] = None
    bias: Optional[tuple] = None
    q: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    values: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    hbar: float = 1.0

    def __post_init__(self):
        if self.dims not in (1, 3):
            raise ValueError("dims must be 1 or 3")
        if self.kind == "gaussian":
            s = _as_axes(self.sigma, self.dims, "sigma")
            b = _as_axes(0.0 if self.bias is None else self.bias, self.dims, "bias")
            if np.any(s <= 0):
                raise ValueError("sigma must be positive")
            object.__setattr__(self, "sigma", tuple(s))
            object.__setattr__(self, "bias", tuple(b))
        elif self.kind == "tabulated":
            if self.dims != 1:
                raise ValueError("tabulated distributions are 1D")
            q = np.asarray(self.q, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if q.ndim != 1 or q.shape != v.shape or q.size < 3:
                raise ValueError("q and values must be equal-length 1D arrays")
            h = np.diff(q)
            if np.any(h <= 0) or np.ptp(h) > 1e-9 * abs(h[0]):
                raise ValueError("q table must be uniform and increasing")
            if np.any(v < 0):
                raise ValueError("mu must be non-negative")
            norm = np.sum(v) * h[0]
            if abs(norm - 1.0) > 1e-10:
                raise ValueError(f"mu not normalized: integral = {norm!r}")
            edge = np.array([q[0] ** 2 * v[0], q[-1] ** 2 * v[-1]])
            if np.any(edge >= _TAIL_TOL * v.max()):
                raise PreconditionError(
                    "tabulated mu does not decay at the table edges "
                    f"(q^2 mu = {edge.max():.3e} vs {_TAIL_TOL:g} max mu)"
                )
            q.setflags(write=False)
            v.setflags(write=False)
            object.__setattr__(self, "q", q)
            object.__setattr__(self, "values", v)
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    # -- evaluation ---------------------------------------------------------

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    @property
    def dq(self) -> float:
        if self.kind != "tabulated":
            raise AttributeError("only tabulated distributions carry a native spacing")
        return float(self.q[1] - self.q[0])

    def marginal(self, axis: int = 0) -> "MeasurementDistribution":
        """1D marginal along ``axis`` (exact for the axis-factorised Gaussian)."""
        if self.dims == 1:
            return self
        return MeasurementDistribution(
            "gaussian", 1, sigma=self.sigma[axis], bias=self.bias[axis], hbar=self.hbar
        )

    def sqrt_pdf(self, q) -> np.ndarray:
        """Real non-negative sqrt(mu(q)).  3D inputs have a trailing axis of 3."""
        q = np.asarray(q, dtype=float)
        if self.kind == "gaussian":
            s = np.asarray(self.sigma)
            b = np.asarray(self.bias)
            if self.dims == 1:
                z = (q - b[0]) / s[0]
                return np.exp(-0.25 * z**2) / (2 * np.pi * s[0] ** 2) ** 0.25
            z = (q - b) / s
            return np.exp(-0.25 * np.sum(z**2, axis=-1)) / np.prod(
                (2 * np.pi * s**2) ** 0.25
            )
        return _sinc_interp(self.q, np.sqrt(self.values), q)

    def pdf(self, q) -> np.ndarray:
        return self.sqrt_pdf(q) ** 2

    def support(self, rel: float = 1e-12, axis: int = 0) -> tuple:
        """Interval outside which mu < rel * max(mu)."""
        if self.kind == "gaussian":
            s, b = self.sigma[axis], self.bias[axis]
            w = s * np.sqrt(-2.0 * np.log(rel))
            return (b - w, b + w)
        idx = np.nonzero(self.values >= rel * self.values.max())[0]
        return (float(self.q[idx[0]]), float(self.q[idx[-1]]))

    def table(self, axis: int = 0, n: int = 4096) -> tuple:
        """(q, mu) samples of the 1D marginal on a uniform table."""
        if self.kind == "tabulated":
            return np.array(self.q), np.array(self.values)
        s, b = self.sigma[axis], self.bias[axis]
        q = b + np.linspace(-_GAUSS_SPAN, _GAUSS_SPAN, n, endpoint=False) * s
        m = self.marginal(axis)
        return q, m.pdf(q)

    def on_lattice(self, spacing: float, kmin: int, kmax: int, axis: int = 0) -> np.ndarray:
        """sqrt(mu) at ``k * spacing`` for integer ``k`` in [kmin, kmax]."""
        pts = np.arange(kmin, kmax + 1) * spacing
        return self.marginal(axis).sqrt_pdf(pts)


def _sinc_interp(q: np.ndarray, s: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Band-limited (Whittaker) interpolation of samples ``s`` at ``pts``."""
    h = q[1] - q[0]
    flat = np.ravel(pts)
    out = np.empty(flat.shape)
    on = np.abs((flat - q[0]) / h - np.round((flat - q[0]) / h)) < 1e-12
    k = np.round((flat - q[0]) / h).astype(int)
    inside = on & (k >= 0) & (k < q.size)
    out[inside] = s[k[inside]]
    out[on & ~inside] = 0.0
    rest = ~on
    if np.any(rest):
        t = (flat[rest, None] - q[None, :]) / h
        out[rest] = np.sinc(t) @ s
    out = np.where(out > 0, out, 0.0)
    return out.reshape(np.shape(pts))


def gaussian_mu(sigma, bias=0.0, dims: int = 1, hbar: float = 1.0) -> MeasurementDistribution:
    return MeasurementDistribution("gaussian", dims, sigma=sigma, bias=bias, hbar=hbar)


def tabulated_mu(q, values, hbar: float = 1.0, normalize: bool = True) -> MeasurementDistribution:
    q = np.asarray(q, dtype=float)
    v = np.asarray(values, dtype=float)
    if normalize:
        v = v / (np.sum(v) * (q[1] - q[0]))
    return MeasurementDistribution("tabulated", 1, q=q, values=v, hbar=hbar)


def gaussian_mixture_mu(
    weights: Sequence[float],
    means: Sequence[float],
    sigmas: Sequence[float],
    dq: Optional[float] = None,
    hbar: float = 1.0,
) -> MeasurementDistribution:
    """Tabulated mixture of 1D Gaussians on a uniform table."""
    w = np.asarray(weights, float)
    mu_ = np.asarray(means, float)
    sg = np.asarray(sigmas, float)
    w = w / w.sum()
    if dq is None:
        dq = sg.min() / 32.0
    lo = np.min(mu_ - _GAUSS_SPAN * sg)
    hi = np.max(mu_ + _GAUSS_SPAN * sg)
    n = int(np.ceil((hi - lo) / dq)) + 1
    q = lo + dq * np.arange(n)
    v = np.zeros_like(q)
    for wi, mi, si in zip(w, mu_, sg):
        v += wi * np.exp(-0.5 * ((q - mi) / si) ** 2) / np.sqrt(2 * np.pi * si**2)
    return tabulated_mu(q, v, hbar=hbar)


# ----------------------------------------------------------------------------
# conjugate displacement density


@dataclass(frozen=True)
class DisplacementDistribution:
    """Samples of nu on a uniform, symmetric y grid (1D)."""

    y: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    def moment(self, k: int) -> float:
        return float(np.sum(self.y**k * self.values) * self.dy)

    def norm(self) -> float:
        return float(np.sum(self.values) * self.dy)


def _nu_1d(q: np.ndarray, mu: np.ndarray, hbar: float) -> DisplacementDistribution:
    n = q.size
    dq = q[1] - q[0]
    c = n // 2
    dy = 2 * np.pi * hbar / (n * dq)
    y = (np.arange(n) - c) * dy
    s = np.sqrt(mu)
    j = np.arange(n)
    # nu~(y_k) = (2 pi hbar)^-1/2 sum_j dq exp(i q_j y_k / hbar) sqrt(mu_j); q_j = q0 + j dq
    # |.|^2 removes the q0 phase, leaving a centred DFT
    phase = np.exp(-2j * np.pi * c * j / n)
    f = sfft.ifft(s * phase) * n * phase
    nu = np.abs(f) ** 2 * dq**2 / (2 * np.pi * hbar)
    # enforce exact evenness on the symmetric part of the grid
    if n % 2 == 0:
        nu[1:] = 0.5 * (nu[1:] + nu[1:][::-1])
    else:
        nu = 0.5 * (nu + nu[::-1])
    return DisplacementDistribution(y, nu)


def conjugate_nu(
    mu: MeasurementDistribution, axis: int = 0, n: int = 4096, check_resolved: bool = True
) -> DisplacementDistribution:
    """nu(y) = |(2 pi hbar)^-1/2 int dq exp(iqy/hbar) sqrt(mu(q))|^2 (1D marginal form).

    ``check_resolved=False`` skips the edge-decay check, e.g. for delta-like mu
    whose nu is flat across the whole conjugate grid.
    """
    q, m = mu.table(axis=axis, n=n)
    dq = q[1] - q[0]
    nu = _nu_1d(q, m, mu.hbar)
    total_mu = np.sum(m) * dq
    if abs(nu.norm() - total_mu) > 1e-6:
        raise PreconditionError(
            f"Plancherel check failed ({nu.norm():.8f} vs {total_mu:.8f}); refine the q table"
        )
    edge = nu.values[[0, -1]].max() / nu.values.max()
    if check_resolved and edge > 1e-6:
        raise PreconditionError(
            f"nu not resolved: edge/peak = {edge:.2e}; the q table is too coarse"
        )
    return nu


def nu_amplitude(mu: MeasurementDistribution, y, axis: int = 0) -> np.ndarray:
    """Complex amplitude (2 pi hbar)^-1/2 int dq exp(iqy/hbar) sqrt(mu(q)) at ``y``.

    Closed form for Gaussian mu; direct quadrature on the native table otherwise.
    """
    y = np.asarray(y, dtype=float)
    hbar = mu.hbar
    if mu.is_gaussian:
        s, b = mu.sigma[axis], mu.bias[axis]
        amp = (2 * s**2 / (np.pi * hbar**2)) ** 0.25
        return amp * np.exp(1j * b * y / hbar - (s * y / hbar) ** 2)
    q, sm = mu.q, np.sqrt(mu.values)
    flat = y.ravel()
    out = np.empty(flat.shape, dtype=complex)
    for lo in range(0, flat.size, 2048):
        blk = flat[lo : lo + 2048]
        out[lo : lo + 2048] = np.exp(1j * np.outer(blk, q) / hbar) @ sm
    return (out * mu.dq / np.sqrt(2 * np.pi * hbar)).reshape(y.shape)


def conjugate_nu_3d(mu: MeasurementDistribution, n: int = 48) -> tuple:
    """Full 3D nu on an n^3 grid for Gaussian mu; returns (y_axes, nu)."""
    if mu.dims != 3 or not mu.is_gaussian:
        raise ValueError("conjugate_nu_3d needs a 3D Gaussian distribution")
    axes, dqs = [], []
    for a in range(3):
        s, b = mu.sigma[a], mu.bias[a]
        qa = b + np.linspace(-10, 10, n, endpoint=False) * s
        axes.append(qa)
        dqs.append(qa[1] - qa[0])
    Q = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    s = mu.sqrt_pdf(Q)
    c = n // 2
    j = np.arange(n)
    ph = np.exp(-2j * np.pi * c * j / n)
    f = s * ph[:, None, None] * ph[None, :, None] * ph[None, None, :]
    f = sfft.ifftn(f) * n**3
    nu = np.abs(f) ** 2 * np.prod(dqs) ** 2 / (2 * np.pi * mu.hbar) ** 3
    ys = [(np.arange(n) - c) * 2 * np.pi * mu.hbar / (n * d) for d in dqs]
    return ys, nu


# ----------------------------------------------------------------------------
# moments and expectations


def _check_tails(mu: MeasurementDistribution):
    if mu.kind == "tabulated":
        v, q = mu.values, mu.q
        if max(q[0] ** 2 * v[0], q[-1] ** 2 * v[-1]) >= _TAIL_TOL * v.max():
            raise PreconditionError("non-decaying tails: moments not finite on the table")


def dist_moment(mu: MeasurementDistribution, k: int, axis: int = 0, central: bool = False) -> float:
    """E_mu[q^k] (k in {1, 2}) along ``axis``; ``central`` gives the variance for k=2."""
    if k not in (1, 2):
        raise ValueError("only k = 1, 2 are supported")
    if mu.is_gaussian:
        s, b = mu.sigma[axis], mu.bias[axis]
        if k == 1:
            return 0.0 if central else float(b)
        return float(s**2) if central else float(s**2 + b**2)
    _check_tails(mu)
    q, v = mu.q, mu.values
    h = mu.dq
    m1 = float(np.sum(q * v) * h)
    if k == 1:
        return 0.0 if central else m1
    m2 = float(np.sum(q**2 * v) * h)
    return m2 - m1**2 if central else m2


def expect_mu(
    mu: MeasurementDistribution, func: Callable, axis: int = 0, n: int = 1 << 15
) -> float:
    """E_mu[func(q)] for the 1D marginal by quadrature on a fine uniform table."""
    if mu.kind == "tabulated":
        q, v, h = mu.q, mu.values, mu.dq
    else:
        s, b = mu.sigma[axis], mu.bias[axis]
        h = 2 * _GAUSS_SPAN * s / n
        q = b + (np.arange(n) - n // 2 + 0.5) * h
        v = mu.marginal(axis).pdf(q)
    return float(np.sum(v * func(q)) * h)


def uncertainty_product(mu: MeasurementDistribution, axis: int = 0) -> float:
    """Var_mu(q) * E_nu[y^2] along ``axis``; bounded below by hbar^2/4."""
    var = dist_moment(mu, 2, axis=axis, central=True)
    nu = conjugate_nu(mu, axis=axis)
    prod = var * nu.moment(2)
    bound = mu.hbar**2 / 4
    if prod < bound * (1 - 1e-6):
        raise AssertionError(f"uncertainty product {prod!r} below hbar^2/4")
    return prod


# ----------------------------------------------------------------------------
# feedback laws


@dataclass(frozen=True)
class FeedbackLaw:
    """Outcome-conditioned momentum kick f(q).

    Kinds: ``linear`` f = alpha q, ``constant`` f = alpha sign(q),
    ``quadratic`` f = alpha |q| q, ``tabulated`` (1D) by linear interpolation.
    In 3D the law is central, f(q) = fbar(|q|) q / |q|.
    """

    kind: str
    alpha: float = 0.0
    q: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    values: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("linear", "constant", "quadratic", "tabulated"):
            raise ValueError(f"unknown feedback kind {self.kind!r}")
        if self.kind == "tabulated":
            q = np.asarray(self.q, float)
            v = np.asarray(self.values, float)
            if q.ndim != 1 or q.shape != v.shape or np.any(np.diff(q) <= 0):
                raise ValueError("tabulated feedback needs increasing q and matching values")
            object.__setattr__(self, "q", q)
            object.__setattr__(self, "values", v)
        elif self.kind in ("constant", "quadratic") and self.alpha < 0:
            raise ValueError("constant/quadratic feedback needs a non-negative coefficient")

    @classmethod
    def linear(cls, alpha):
        return cls("linear", float(alpha))

    @classmethod
    def constant(cls, alpha_c):
        return cls("constant", float(alpha_c))

    @classmethod
    def quadratic(cls, alpha_s):
        return cls("quadratic", float(alpha_s))

    @classmethod
    def tabulated(cls, q, values):
        return cls("tabulated", 0.0, q=q, values=values)

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    def radial(self, r) -> np.ndarray:
        """fbar(r) for r >= 0."""
        r = np.asarray(r, float)
        if self.kind == "linear":
            return self.alpha * r
        if self.kind == "constant":
            return np.where(r > 0, self.alpha, 0.0)
        if self.kind == "quadratic":
            return self.alpha * r**2
        return np.interp(r, self.q, self.values)

    def __call__(self, q) -> np.ndarray:
        return self.evaluate(q)

    def evaluate(self, q) -> np.ndarray:
        """f(q); 1D for scalar/array input, central 3D for a trailing axis of 3."""
        q = np.asarray(q, float)
        if self.kind == "tabulated" and (q.ndim == 0 or q.shape[-1:] != (3,)):
            return np.interp(q, self.q, self.values)
        if q.ndim >= 1 and q.shape[-1] == 3:
            r = np.linalg.norm(q, axis=-1, keepdims=True)
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(r > 0, q / np.where(r > 0, r, 1.0), 0.0)
            return self.radial(r) * unit
        if self.kind == "linear":
            return self.alpha * q
        if self.kind == "constant":
            return self.alpha * np.sign(q)
        return self.alpha * np.abs(q) * q


# ----------------------------------------------------------------------------
# CSV I/O


def read_mu_csv(path, hbar: float = 1.0) -> MeasurementDistribution:
    """Two-column CSV (q, mu); lines starting with '#' are ignored."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                continue  # header line
    a = np.array(rows)
    return tabulated_mu(a[:, 0], a[:, 1], hbar=hbar)


def write_mu_csv(mu: MeasurementDistribution, path, n: int = 4096) -> None:
    q, v = mu.table(n=n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "mu"])
        for qi, vi in zip(q, v):
            w.writerow([repr(float(qi)), repr(float(vi))])
