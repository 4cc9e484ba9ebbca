"""Clamped B-spline bases on [0, 1]: evaluation, exact Gram integrals, projections."""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError

__all__ = [
    "BSplineBasis",
    "GridFunction",
    "build_basis",
    "eval_basis",
    "basis_matrix",
    "gram_matrix",
    "integrate_against",
    "project_function",
    "synthesize",
]


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis of a given order on [0, 1].

    ``order`` is the spline order b (polynomial degree b - 1). The full knot
    vector repeats 0 and 1 with multiplicity b around the strictly increasing
    interior knots, giving ``size = K + b`` basis functions.
    """

    order: int
    interior_knots: np.ndarray
    knots: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        interior = np.asarray(self.interior_knots, dtype=float)
        if interior.ndim != 1:
            raise ValueError("interior_knots must be one-dimensional")
        if interior.size:
            if np.any(np.diff(interior) <= 0):
                raise ValueError("interior knots must be strictly increasing")
            if interior[0] <= 0.0 or interior[-1] >= 1.0:
                raise ValueError("interior knots must lie strictly inside (0, 1)")
        object.__setattr__(self, "interior_knots", interior)
        full = np.concatenate([np.zeros(self.order), interior, np.ones(self.order)])
        object.__setattr__(self, "knots", full)

    @property
    def size(self) -> int:
        """Number of basis functions N = K + b."""
        return self.interior_knots.size + self.order

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knots 0 < tau_1 < ... < tau_K < 1 bounding the K+1 spans."""
        return np.concatenate([[0.0], self.interior_knots, [1.0]])


@dataclass(frozen=True)
class GridFunction:
    """One or more functions sampled on a shared strictly increasing grid in [0, 1].

    ``values`` has one row per channel and one column per grid point.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid must be 1-D with at least two points")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if grid[0] < 0.0 or grid[-1] > 1.0:
            raise ValueError("grid points must lie in [0, 1]")
        if values.shape[1] != grid.size:
            raise ValueError(
                f"values have {values.shape[1]} columns but grid has {grid.size} points"
            )
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]


def build_basis(order: int, num_interior_knots: int) -> BSplineBasis:
    """Build a clamped basis with uniform interior knots k/(K+1), k = 1..K."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if num_interior_knots < 0:
        raise ValueError(f"num_interior_knots must be >= 0, got {num_interior_knots}")
    K = num_interior_knots
    interior = np.arange(1, K + 1, dtype=float) / (K + 1)
    return BSplineBasis(order=order, interior_knots=interior)


def basis_from_size(order: int, size: int) -> BSplineBasis:
    """Build the uniform-knot basis with exactly ``size`` functions."""
    if size < order:
        raise ValueError(f"size must be >= order, got size={size}, order={order}")
    return build_basis(order, size - order)


def basis_matrix(basis: BSplineBasis, s: np.ndarray) -> np.ndarray:
    """Evaluate all basis functions at the points ``s`` (Cox-de Boor recursion).

    Returns an array of shape (len(s), N).
    """
    s = np.asarray(s, dtype=float).ravel()
    if s.size and (s.min() < 0.0 or s.max() > 1.0):
        raise ValueError("evaluation points must lie in [0, 1]")
    knots = basis.knots
    nk = knots.size
    # Order-1 indicators; the right-most nonempty span is closed at s = 1.
    B = np.zeros((s.size, nk - 1))
    for i in range(nk - 1):
        left, right = knots[i], knots[i + 1]
        if right <= left:
            continue
        if right == knots[-1]:
            sel = (s >= left) & (s <= right)
        else:
            sel = (s >= left) & (s < right)
        B[sel, i] = 1.0
    for k in range(2, basis.order + 1):
        Bn = np.zeros((s.size, nk - k))
        for i in range(nk - k):
            d1 = knots[i + k - 1] - knots[i]
            if d1 > 0.0:
                Bn[:, i] += (s - knots[i]) / d1 * B[:, i]
            d2 = knots[i + k] - knots[i + 1]
            if d2 > 0.0:
                Bn[:, i] += (knots[i + k] - s) / d2 * B[:, i + 1]
        B = Bn
    return B


def eval_basis(basis: BSplineBasis, s: float) -> np.ndarray:
    """Basis values at a single point; nonnegative and summing to one."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    return basis_matrix(basis, np.array([s]))[0]


def _quadrature_nodes(basis: BSplineBasis):
    """Gauss-Legendre nodes/weights with ``order`` points per knot span.

    Exact for piecewise polynomials of degree <= 2*order - 1, which covers
    products of two basis functions (degree 2*order - 2).
    """
    ref_x, ref_w = leggauss(basis.order)
    brk = basis.breakpoints
    lo, hi = brk[:-1], brk[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * ref_x[None, :]).ravel()
    weights = (half[:, None] * ref_w[None, :]).ravel()
    return nodes, weights


def gram_matrix(basis: BSplineBasis) -> np.ndarray:
    """Exact Gram matrix of pairwise basis products integrated over [0, 1]."""
    nodes, weights = _quadrature_nodes(basis)
    E = basis_matrix(basis, nodes)
    G = E.T @ (weights[:, None] * E)
    return 0.5 * (G + G.T)


def basis_masses(basis: BSplineBasis) -> np.ndarray:
    """Integrals of each basis function over [0, 1]; they sum to one."""
    nodes, weights = _quadrature_nodes(basis)
    return weights @ basis_matrix(basis, nodes)


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights for a strictly increasing grid."""
    grid = np.asarray(grid, dtype=float)
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def integrate_against(basis: BSplineBasis, f: GridFunction) -> np.ndarray:
    """Trapezoid approximation of the integrals of f_c(s) B_k(s) over [0, 1].

    Returns an array of shape (channels, N).
    """
    w = trapezoid_weights(f.grid)
    E = basis_matrix(basis, f.grid)
    return (f.values * w[None, :]) @ E


def project_function(basis: BSplineBasis, t: GridFunction) -> np.ndarray:
    """L2 projection of each channel of ``t`` onto the spline space.

    Returns spline coefficients with shape (N, channels), from a Gram solve
    against trapezoid moments of ``t``.
    """
    G = gram_matrix(basis)
    moments = integrate_against(basis, t)
    try:
        c, low = cho_factor(G)
    except np.linalg.LinAlgError as exc:  # cannot occur for a valid basis
        raise NumericalError("Gram matrix is numerically singular") from exc
    return cho_solve((c, low), moments.T)


def synthesize(basis: BSplineBasis, coef: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Evaluate spline curves with coefficient columns ``coef`` at points ``s``."""
    coef = np.asarray(coef, dtype=float)
    E = basis_matrix(basis, s)
    return E @ coef
