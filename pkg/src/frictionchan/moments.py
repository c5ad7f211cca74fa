"""First- and second-moment containers (physical units)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MomentState", "MomentState3D", "moments_of"]


@dataclass
class MomentState:
    """1D moments <x>, <p>, <x^2>, <{x,p}>, <p^2> in physical units.

    ``xp`` is the full anticommutator expectation <xp + px>.
    """

    x: float
    p: float
    xx: float
    xp: float
    pp: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.p, self.xx, self.xp, self.pp], dtype=float)

    @classmethod
    def from_vector(cls, v) -> "MomentState":
        v = np.asarray(v, dtype=float)
        return cls(*map(float, v[:5]))

    @property
    def var_x(self) -> float:
        return self.xx - self.x**2

    @property
    def var_p(self) -> float:
        return self.pp - self.p**2

    @property
    def cov_xp(self) -> float:
        return 0.5 * self.xp - self.x * self.p

    def uncertainty_defect(self, hbar: float = 1.0) -> float:
        """Var(x)Var(p) - Cov^2 - hbar^2/4 (non-negative for physical states)."""
        return self.var_x * self.var_p - self.cov_xp**2 - hbar**2 / 4

    def is_physical(self, hbar: float = 1.0, slack: float = 1e-9) -> bool:
        return (
            self.var_x >= -slack
            and self.var_p >= -slack
            and self.uncertainty_defect(hbar) >= -slack * max(1.0, hbar**2)
        )

    def to_quadratures(self, mass: float, omega: float, hbar: float = 1.0) -> "MomentState":
        """Dimensionless xi = x/x0, pi = p/p0 with x0 = sqrt(hbar/(m omega))."""
        x0 = np.sqrt(hbar / (mass * omega))
        p0 = np.sqrt(hbar * mass * omega)
        return MomentState(
            self.x / x0, self.p / p0, self.xx / x0**2, self.xp / (x0 * p0), self.pp / p0**2
        )

    def from_quadratures(self, mass: float, omega: float, hbar: float = 1.0) -> "MomentState":
        x0 = np.sqrt(hbar / (mass * omega))
        p0 = np.sqrt(hbar * mass * omega)
        return MomentState(
            self.x * x0, self.p * p0, self.xx * x0**2, self.xp * x0 * p0, self.pp * p0**2
        )

    def energy(self, mass: float, omega: float = 0.0) -> float:
        return self.pp / (2 * mass) + 0.5 * mass * omega**2 * self.xx


@dataclass
class MomentState3D:
    """3D moments: means, X_jk = <x_j x_k>, C_jk = <{x_j, p_k}>, P_jk = <p_j p_k>.

    ``C`` is not symmetric in general, so it is stored in full.
    """

    x: np.ndarray
    p: np.ndarray
    X: np.ndarray
    C: np.ndarray
    P: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, float).reshape(3)
        self.p = np.asarray(self.p, float).reshape(3)
        self.X = np.asarray(self.X, float).reshape(3, 3)
        self.C = np.asarray(self.C, float).reshape(3, 3)
        self.P = np.asarray(self.P, float).reshape(3, 3)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.p, self.X.ravel(), self.C.ravel(), self.P.ravel()])

    @classmethod
    def from_vector(cls, v) -> "MomentState3D":
        v = np.asarray(v, float)
        return cls(v[0:3], v[3:6], v[6:15], v[15:24], v[24:33])

    def rotate(self, rot: np.ndarray) -> "MomentState3D":
        r = np.asarray(rot, float)
        return MomentState3D(r @ self.x, r @ self.p, r @ self.X @ r.T, r @ self.C @ r.T, r @ self.P @ r.T)

    def axis(self, j: int) -> MomentState:
        return MomentState(self.x[j], self.p[j], self.X[j, j], self.C[j, j], self.P[j, j])

    @classmethod
    def from_axes(cls, axes) -> "MomentState3D":
        """Uncorrelated product of three 1D moment states."""
        x = np.array([a.x for a in axes])
        p = np.array([a.p for a in axes])
        X = np.outer(x, x)
        C = 2 * np.outer(x, p)
        P = np.outer(p, p)
        for j, a in enumerate(axes):
            X[j, j], C[j, j], P[j, j] = a.xx, a.xp, a.pp
        return cls(x, p, X, C, P)


def moments_of(state) -> MomentState:
    """Moments of a grid state (wavefunction or density matrix)."""
    from .core import expectation

    e = [expectation(state, k).real for k in ("x", "p", "x2", "xp", "p2")]
    return MomentState(e[0], e[1], e[2], 2 * e[3], e[4])
