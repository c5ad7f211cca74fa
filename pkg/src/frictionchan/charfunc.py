"""Characteristic-function picture of the linear-friction channel.

Linear feedback acts as
``chi'(P, X) = A(P, X) exp(-i alpha P X / 2 hbar) chi(P, (1 - alpha) X)`` with
``A(P, X) = int dq exp(i alpha q X / hbar) sqrt(mu(q - P) mu(q))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy.optimize import minimize_scalar

from .core import CharFunction, eval_momentum_series, x2p
from .distributions import MeasurementDistribution, _GAUSS_SPAN
from .errors import PreconditionError

__all__ = [
    "A_factor",
    "channel_on_char",
    "rescale_X",
    "gibbs_residual",
    "min_gibbs_residual",
    "fixpoint_onaxis",
    "IterationDiagnostics",
    "iterate_channel_char",
]


def _check_alpha(alpha: float):
    if not 0 < alpha < 2:
        raise PreconditionError(f"alpha = {alpha} outside (0, 2)")


# ----------------------------------------------------------------------------
# A(P, X)


def _gaussian_A(mu: MeasurementDistribution, alpha, P, X):
    s, b, hbar = mu.sigma[0], mu.bias[0], mu.hbar
    return np.exp(
        -(P**2) / (8 * s**2)
        + 1j * alpha * X * (b + P / 2) / hbar
        - (alpha * s * X / hbar) ** 2 / 2
    )


def _quadrature_A(mu: MeasurementDistribution, alpha, P, X, n: int = 1 << 14):
    """Midpoint quadrature on a uniform q table; shifted roots via an FFT phase."""
    if mu.is_gaussian:
        s, b = mu.sigma[0], mu.bias[0]
        h = 2 * _GAUSS_SPAN * s / n
        q = b + (np.arange(n) - n // 2 + 0.5) * h
        sq = mu.sqrt_pdf(q)
        shifted = lambda p: mu.sqrt_pdf(q - p)  # noqa: E731
    else:
        q, sq, h = mu.q, np.sqrt(mu.values), mu.dq
        pad = q.size
        qq = q[0] + h * np.arange(q.size + 2 * pad) - pad * h
        base = np.concatenate([np.zeros(pad), sq, np.zeros(pad)])
        k = 2 * np.pi * sfft.fftfreq(qq.size, d=h)
        spec = sfft.fft(base)
        q = qq
        sq = base

        def shifted(p):
            return np.real(sfft.ifft(spec * np.exp(-1j * k * p)))

    hbar = mu.hbar
    P, X = np.broadcast_arrays(np.asarray(P, float), np.asarray(X, float))
    out = np.empty(P.shape, dtype=complex)
    for pval in np.unique(P):
        sel = P == pval
        w = sq * shifted(pval) * h
        out[sel] = np.exp(1j * alpha * np.outer(X[sel], q) / hbar) @ w
    return out


def A_factor(mu: MeasurementDistribution, alpha: float, P, X, method: str = "auto") -> np.ndarray:
    """A(P, X) for a 1D mu; ``method`` is 'analytic' (Gaussian), 'quadrature' or 'auto'."""
    if mu.dims != 1:
        raise PreconditionError("A_factor is implemented for 1D distributions")
    if method == "auto":
        method = "analytic" if mu.is_gaussian else "quadrature"
    if method == "analytic":
        if not mu.is_gaussian:
            raise PreconditionError("analytic A(P, X) needs a Gaussian mu")
        P, X = np.broadcast_arrays(np.asarray(P, float), np.asarray(X, float))
        return _gaussian_A(mu, alpha, P, X)
    if method == "quadrature":
        return _quadrature_A(mu, alpha, P, X)
    raise ValueError(f"unknown method {method!r}")


# ----------------------------------------------------------------------------
# channel on chi


def rescale_X(chi: CharFunction, s: float) -> np.ndarray:
    """chi(P, s X) on the same (P, X) grid by exact band-limited evaluation; |s| <= 1."""
    if abs(s) > 1 + 1e-12:
        raise PreconditionError(f"rescaling by {s} leaves the X band")
    grid = chi.grid
    hbar = grid.hbar
    X = grid.x
    # rows are exp(-i P X / 2) sum_j exp(i p_j X) g_d(j)
    g = x2p(chi.values * np.exp(0.5j * np.outer(grid.p, X) / hbar), grid, axis=-1)
    vals = eval_momentum_series(g, grid, s * X)
    return vals * np.exp(-0.5j * np.outer(grid.p, s * X) / hbar)


def channel_on_char(
    alpha: float, mu: MeasurementDistribution, chi: CharFunction, method: str = "auto"
) -> CharFunction:
    """Apply the linear-friction channel in the characteristic-function picture."""
    _check_alpha(alpha)
    return _apply(_law_table(alpha, mu, chi.grid, method), alpha, chi)


def _law_table(alpha, mu, grid, method="auto"):
    """A(P, X) exp(-i alpha P X / 2 hbar) on the grid."""
    P, X = np.meshgrid(grid.p, grid.x, indexing="ij")
    a = A_factor(mu, alpha, P, X, method=method)
    return a * np.exp(-0.5j * alpha * P * X / grid.hbar)


def _apply(table, alpha, chi):
    return CharFunction(chi.grid, table * rescale_X(chi, 1 - alpha))


# ----------------------------------------------------------------------------
# Gibbs condition


def _default_X(mu: MeasurementDistribution, alpha: float, n: int = 801) -> np.ndarray:
    if mu.is_gaussian:
        s = mu.sigma[0]
    else:
        m1 = np.sum(mu.q * mu.values) * mu.dq
        s = math.sqrt(np.sum((mu.q - m1) ** 2 * mu.values) * mu.dq)
    return np.linspace(-10, 10, n) * mu.hbar / (alpha * s)


def gibbs_residual(
    T: float,
    m: float,
    mu: MeasurementDistribution,
    alpha: float,
    X: Optional[np.ndarray] = None,
    method: str = "quadrature",
) -> float:
    """sup_X |A(0, X) - exp(-m T X^2 alpha (2 - alpha) / 2 hbar^2)| (k_B = 1)."""
    _check_alpha(alpha)
    X = _default_X(mu, alpha) if X is None else np.asarray(X, float)
    a = A_factor(mu, alpha, np.zeros_like(X), X, method=method)
    target = np.exp(-m * T * X**2 * alpha * (2 - alpha) / (2 * mu.hbar**2))
    return float(np.max(np.abs(a - target)))


def min_gibbs_residual(
    m: float, mu: MeasurementDistribution, alpha: float, X: Optional[np.ndarray] = None
) -> tuple:
    """(T*, residual) minimising the Gibbs residual over temperature."""
    _check_alpha(alpha)
    X = _default_X(mu, alpha) if X is None else np.asarray(X, float)
    a = A_factor(mu, alpha, np.zeros_like(X), X, method="quadrature")

    def res(logT):
        t = np.exp(-m * np.exp(logT) * X**2 * alpha * (2 - alpha) / (2 * mu.hbar**2))
        return float(np.max(np.abs(a - t)))

    grid = np.linspace(-12, 8, 201)
    vals = [res(v) for v in grid]
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    opt = minimize_scalar(res, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    best = min((opt.fun, opt.x), (vals[i], grid[i]))
    return float(np.exp(best[1])), float(best[0])


# ----------------------------------------------------------------------------
# fix-point iteration


def fixpoint_onaxis(mu: MeasurementDistribution, alpha: float, X, tol: float = 1e-15) -> np.ndarray:
    """Limit chi_inf(0, X) = prod_k A(0, (1 - alpha)^k X) of the on-axis iteration."""
    _check_alpha(alpha)
    X = np.asarray(X, float)
    if mu.is_gaussian:
        s, hbar = mu.sigma[0], mu.hbar
        b = mu.bias[0]
        # sum_k (1-alpha)^k and sum_k (1-alpha)^(2k)
        s1 = 1 / alpha
        s2 = 1 / (alpha * (2 - alpha))
        return np.exp(1j * alpha * b * X * s1 / hbar - (alpha * s * X / hbar) ** 2 * s2 / 2)
    out = np.ones(X.shape, dtype=complex)
    scale = 1.0
    zeros = np.zeros_like(X)
    while True:
        f = A_factor(mu, alpha, zeros, scale * X)
        out *= f
        if np.max(np.abs(f - 1)) < tol or scale == 0.0:
            return out
        scale *= 1 - alpha


@dataclass
class IterationDiagnostics:
    """Per-iteration measurements of repeated channel application on chi.

    ``offaxis_sup[n]`` is max over P != 0 of sup_X |chi_n(P, X)|;
    ``row_sup[n, d]`` the per-row sup; ``bound[d] = A(P_d, 0)``;
    ``onaxis[n]`` is chi_n(0, X) and ``onaxis_error[n]`` its sup distance
    to :func:`fixpoint_onaxis` (the Gibbs profile for Gaussian mu).
    """

    offaxis_sup: np.ndarray
    row_sup: np.ndarray
    bound: np.ndarray
    onaxis: np.ndarray
    final: CharFunction
    max_ratio_excess: float
    onaxis_error: np.ndarray

    @property
    def decay_ok(self) -> bool:
        return self.max_ratio_excess <= 0.0


def iterate_channel_char(
    alpha: float,
    mu: MeasurementDistribution,
    chi0: CharFunction,
    n: int,
    tol: float = 1e-12,
) -> IterationDiagnostics:
    """Apply the channel n times and check |chi| shrinks row-wise by at most A(P, 0).

    ``max_ratio_excess`` is the largest violation of
    sup|chi_{k+1}(P)| <= A(P, 0) sup|chi_k(P)| + tol; an AssertionError is
    raised if it is positive.
    """
    _check_alpha(alpha)
    grid = chi0.grid
    c = grid.center
    bound = np.real(A_factor(mu, alpha, grid.p, np.zeros(grid.n)))
    chi = chi0
    sups = [np.max(np.abs(chi.values), axis=1)]
    onaxis = [chi.values[c].copy()]
    excess = -np.inf
    table = _law_table(alpha, mu, grid) if n > 0 else None
    for _ in range(n):
        chi = _apply(table, alpha, chi)
        s = np.max(np.abs(chi.values), axis=1)
        prev = sups[-1]
        diff = s - (bound * prev + tol)
        diff[c] = -np.inf
        excess = max(excess, float(np.max(diff)))
        sups.append(s)
        onaxis.append(chi.values[c].copy())
    row = np.array(sups)
    off = np.delete(row, c, axis=1).max(axis=1)
    excess = excess if n > 0 else 0.0
    if excess > 0:
        raise AssertionError(f"off-axis decay slower than A(P, 0) by {excess:.3e}")
    onaxis = np.array(onaxis)
    target = fixpoint_onaxis(mu, alpha, grid.x)
    err = np.max(np.abs(onaxis - target[None, :]), axis=1)
    return IterationDiagnostics(off, row, bound, onaxis, chi, excess, err)
