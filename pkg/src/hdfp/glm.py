"""Exponential-family machinery for the functional linear model.

The model couples baseline covariates with functional predictors through the
linear predictor  z_i' alpha + integral of B(s)' Gamma x_i(s) ds.  After
stacking theta = (alpha, N^{-1/2} vec(Gamma)) the predictor is a plain inner
product against one design row per subject, so loss, gradient, and Hessian
reduce to standard GLM expressions.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .bspline import BSplineBasis, GridFunction, basis_matrix, trapezoid_weights

__all__ = [
    "Family",
    "get_family",
    "GAUSSIAN",
    "LOGISTIC",
    "FunctionalDataset",
    "DesignMatrix",
    "ThetaVector",
    "build_design",
    "loss",
    "gradient",
    "hessian",
]


class Family:
    """Cumulant function psi and its first two derivatives for one GLM family."""

    def __init__(self, kind: str):
        if kind not in ("gaussian", "logistic"):
            raise ValueError(f"unknown family {kind!r}")
        self.kind = kind

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            return 0.5 * t * t
        # log(1 + e^t), overflow-safe
        return np.logaddexp(0.0, t)

    def psi_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            return t
        return expit(t)

    def psi_double_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            return np.ones_like(t)
        # expit(t) * expit(-t) stays positive where 1 - expit(t) underflows
        return expit(t) * expit(-t)

    @property
    def curvature_bound(self) -> float:
        """Upper bound on psi'' (1 for gaussian, 1/4 for logistic)."""
        return 1.0 if self.kind == "gaussian" else 0.25

    def __repr__(self):
        return f"Family({self.kind!r})"


GAUSSIAN = Family("gaussian")
LOGISTIC = Family("logistic")


def get_family(kind: str) -> Family:
    return Family(kind)


@dataclass(frozen=True)
class FunctionalDataset:
    """Outcomes, baseline covariates, and functional predictors on a shared grid.

    ``x`` holds the functional predictors with shape (n, d, G); ``z`` may have
    zero columns when there are no baseline covariates.
    """

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    grid: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float)
        x = np.asarray(self.x, dtype=float)
        grid = np.asarray(self.grid, dtype=float)
        if y.size < 1:
            raise ValueError("dataset needs at least one subject")
        if z.ndim != 2 or z.shape[0] != y.size:
            raise ValueError("z must be n x q")
        if x.ndim != 3 or x.shape[0] != y.size:
            raise ValueError("x must be n x d x G")
        if grid.ndim != 1 or grid.size != x.shape[2]:
            raise ValueError("grid length must match the last axis of x")
        if np.any(np.diff(grid) <= 0) or grid[0] < 0.0 or grid[-1] > 1.0:
            raise ValueError("grid must be strictly increasing within [0, 1]")
        for name, arr in (("y", y), ("z", z), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "grid", grid)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def q(self) -> int:
        return self.z.shape[1]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subject(self, i: int) -> GridFunction:
        """Functional predictors of subject i as a d-channel grid function."""
        return GridFunction(grid=self.grid, values=self.x[i])

    def take(self, indices) -> "FunctionalDataset":
        """Row subset (used by cross-validation folds)."""
        idx = np.asarray(indices, dtype=int)
        return FunctionalDataset(
            y=self.y[idx], z=self.z[idx], x=self.x[idx], grid=self.grid
        )


@dataclass(frozen=True)
class DesignMatrix:
    """Stacked design with one baseline block and d functional blocks of size N.

    Row i is [z_i', sqrt(N) * moments of x_i against the basis], so that the
    inner product with theta = (alpha, N^{-1/2} vec(Gamma)) reproduces the
    functional linear predictor.
    """

    w: np.ndarray
    q: int
    d: int
    basis_size: int

    def __post_init__(self):
        if self.w.shape[1] != self.q + self.d * self.basis_size:
            raise ValueError("design column count does not match the block layout")

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def num_cols(self) -> int:
        return self.w.shape[1]

    def group_cols(self, j: int) -> slice:
        """Column slice of functional group j (0-based)."""
        if not 0 <= j < self.d:
            raise ValueError(f"group index {j} out of range for d={self.d}")
        start = self.q + j * self.basis_size
        return slice(start, start + self.basis_size)


@dataclass
class ThetaVector:
    """Stacked parameter (alpha, N^{-1/2} vec(Gamma)) with its block layout."""

    flat: np.ndarray
    q: int
    d: int
    basis_size: int

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=float).ravel()
        if self.flat.size != self.q + self.d * self.basis_size:
            raise ValueError("theta length does not match the block layout")

    @classmethod
    def zeros(cls, q: int, d: int, basis_size: int) -> "ThetaVector":
        return cls(np.zeros(q + d * basis_size), q, d, basis_size)

    @classmethod
    def from_parts(cls, alpha, gamma, basis_size=None) -> "ThetaVector":
        """Assemble from alpha (q,) and unscaled spline coefficients gamma (d, N)."""
        alpha = np.asarray(alpha, dtype=float).ravel()
        gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
        N = gamma.shape[1] if basis_size is None else basis_size
        scaled = gamma.ravel() / np.sqrt(N)
        return cls(np.concatenate([alpha, scaled]), alpha.size, gamma.shape[0], N)

    @property
    def alpha(self) -> np.ndarray:
        return self.flat[: self.q]

    @property
    def gamma_scaled(self) -> np.ndarray:
        """The d*N tail holding N^{-1/2} gamma_j blocks."""
        return self.flat[self.q :]

    @property
    def gamma(self) -> np.ndarray:
        """Unscaled spline coefficients, shape (d, N)."""
        return np.sqrt(self.basis_size) * self.gamma_scaled.reshape(
            self.d, self.basis_size
        )

    def group(self, j: int) -> np.ndarray:
        """Scaled block N^{-1/2} gamma_j."""
        start = self.q + j * self.basis_size
        return self.flat[start : start + self.basis_size]

    def copy(self) -> "ThetaVector":
        return ThetaVector(self.flat.copy(), self.q, self.d, self.basis_size)


def _theta_flat(theta) -> np.ndarray:
    return theta.flat if isinstance(theta, ThetaVector) else np.asarray(theta, float)


def build_design(dataset: FunctionalDataset, basis: BSplineBasis) -> DesignMatrix:
    """Assemble the n x (q + dN) design from trapezoid moments of the predictors."""
    N = basis.size
    wts = trapezoid_weights(dataset.grid)
    E = basis_matrix(basis, dataset.grid) * wts[:, None]
    n, d, G = dataset.x.shape
    moments = dataset.x.reshape(n * d, G) @ E
    func_block = np.sqrt(N) * moments.reshape(n, d * N)
    w = np.concatenate([dataset.z, func_block], axis=1)
    return DesignMatrix(w=w, q=dataset.q, d=d, basis_size=N)


def loss(design: DesignMatrix, y: np.ndarray, family: Family, theta) -> float:
    """Mean negative log-likelihood, dropping terms that do not involve theta."""
    eta = design.w @ _theta_flat(theta)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != design.n:
        raise ValueError("y length does not match the design")
    return float(np.mean(family.psi(eta) - y * eta))


def gradient(design: DesignMatrix, y: np.ndarray, family: Family, theta) -> np.ndarray:
    """Exact gradient of ``loss`` with respect to theta."""
    eta = design.w @ _theta_flat(theta)
    y = np.asarray(y, dtype=float).ravel()
    resid = family.psi_prime(eta) - y
    return design.w.T @ resid / design.n


def hessian(design: DesignMatrix, y: np.ndarray, family: Family, theta) -> np.ndarray:
    """Exact Hessian of ``loss``; positive semidefinite for both families."""
    eta = design.w @ _theta_flat(theta)
    wgt = family.psi_double_prime(eta)
    H = design.w.T @ (wgt[:, None] * design.w) / design.n
    return 0.5 * (H + H.T)
