"""Seeded generators for the simulation studies.

Functional coefficients come from a damped Fourier series; functional
predictors are spline-smooth random curves, either independent across
channels or sharing an equicorrelated factor to mimic strongly correlated
spectral data; outcomes follow the gaussian (normal or scaled-t3 noise) or
logistic model.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .bspline import GridFunction, basis_matrix, build_basis, trapezoid_weights
from .errors import NumericalError
from .glm import FunctionalDataset

__all__ = [
    "ScenarioConfig",
    "fourier_beta",
    "fourier_eta",
    "gen_uncorrelated_x",
    "gen_correlated_x_surrogate",
    "gen_outcome",
    "build_scenario",
]

_NUM_FOURIER_TERMS = 50
_X_BASIS_SIZE = 10
_UNCORRELATED_COEF_SD = 5.0
_UNCORRELATED_NOISE_SD = 0.5
_SURROGATE_COEF_SD = 25.0
_SURROGATE_NOISE_SD = 10.0


def _rng_for(seed, stream: int) -> np.random.Generator:
    """Independent stream per (seed, stream) pair."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(stream))))


def fourier_eta() -> np.ndarray:
    """Series weights: 1.2 - 0.2k for k <= 4, then 0.4 (k - 3)^-4 up to k = 50."""
    k = np.arange(1, _NUM_FOURIER_TERMS + 1, dtype=float)
    tail_base = np.where(k > 4, k - 3.0, 1.0)
    return np.where(k <= 4, 1.2 - 0.2 * k, 0.4 * tail_base**-4)


def _fourier_matrix(grid: np.ndarray) -> np.ndarray:
    """Rows k = 1..50 of the Fourier system on [0, 1] (constant, cosines, sines)."""
    grid = np.asarray(grid, dtype=float)
    out = np.empty((_NUM_FOURIER_TERMS, grid.size))
    u = np.pi * (2.0 * grid - 1.0)
    for k in range(1, _NUM_FOURIER_TERMS + 1):
        if k == 1:
            out[k - 1] = 1.0
        elif k % 2 == 0:
            out[k - 1] = np.sqrt(2.0) * np.cos((k // 2) * u)
        else:
            out[k - 1] = np.sqrt(2.0) * np.sin(((k + 1) // 2 - 1) * u)
    return out


def fourier_beta(c: float, grid) -> GridFunction:
    """Coefficient curve c * sum_k eta_k phi_k(s) evaluated on the grid."""
    grid = np.asarray(grid, dtype=float)
    values = c * (fourier_eta() @ _fourier_matrix(grid))
    return GridFunction(grid=grid, values=values[None, :])


def _smooth_curves(num_draws, d, grid, rng, coef_sd, corr=0.0):
    """Spline-smooth random curves; channels share an equicorrelated factor."""
    basis = build_basis(4, _X_BASIS_SIZE - 4)
    E = basis_matrix(basis, np.asarray(grid, dtype=float))
    if corr > 0.0:
        shared = rng.normal(0.0, coef_sd, size=(num_draws, 1, basis.size))
        idio = rng.normal(0.0, coef_sd, size=(num_draws, d, basis.size))
        xi = np.sqrt(corr) * shared + np.sqrt(1.0 - corr) * idio
    else:
        xi = rng.normal(0.0, coef_sd, size=(num_draws, d, basis.size))
    return xi @ E.T


def _gen_x_batch(num_draws, d, grid, rng, kind, target_corr=0.6, noise_sd=None):
    grid = np.asarray(grid, dtype=float)
    if kind == "uncorrelated":
        smooth = _smooth_curves(num_draws, d, grid, rng, _UNCORRELATED_COEF_SD)
        sd = _UNCORRELATED_NOISE_SD if noise_sd is None else noise_sd
    elif kind == "correlated_surrogate":
        if not 0.0 <= target_corr < 1.0:
            raise ValueError(f"target_corr must be in [0, 1), got {target_corr}")
        smooth = _smooth_curves(
            num_draws, d, grid, rng, _SURROGATE_COEF_SD, corr=target_corr
        )
        sd = _SURROGATE_NOISE_SD if noise_sd is None else noise_sd
    else:
        raise ValueError(f"unknown predictor kind {kind!r}")
    if sd > 0.0:
        smooth = smooth + sd * rng.standard_normal(smooth.shape)
    return smooth


def gen_uncorrelated_x(d: int, grid, seed, noise_sd: float = None) -> GridFunction:
    """One draw of d independent spline-smooth channels plus white grid noise."""
    rng = _rng_for(seed, 0)
    values = _gen_x_batch(1, d, grid, rng, "uncorrelated", noise_sd=noise_sd)[0]
    return GridFunction(grid=np.asarray(grid, dtype=float), values=values)


def gen_correlated_x_surrogate(
    d: int, grid, target_corr: float = 0.6, seed=0, noise_sd: float = None
) -> GridFunction:
    """One draw of d channels sharing an equicorrelated smooth factor.

    The smooth components carry most of the channel-average variance, so the
    empirical pairwise correlation of channel averages tracks ``target_corr``
    despite the heavy additive grid noise.
    """
    rng = _rng_for(seed, 0)
    values = _gen_x_batch(
        1, d, grid, rng, "correlated_surrogate", target_corr, noise_sd=noise_sd
    )[0]
    return GridFunction(grid=np.asarray(grid, dtype=float), values=values)


def gen_outcome(x, grid, z, beta_values, alpha0, family: str, seed):
    """Outcomes from the functional linear predictor under one noise model.

    ``x`` is (n, d, G), ``beta_values`` is (d, G) on the same grid.  For the
    logistic family the first baseline coefficient is shifted so the mean
    success probability is 0.5 (the shift is solved by bisection); the
    realized intercept is returned alongside the outcomes.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    beta_values = np.atleast_2d(np.asarray(beta_values, dtype=float))
    alpha0 = np.asarray(alpha0, dtype=float).ravel()
    n = x.shape[0]
    wts = trapezoid_weights(np.asarray(grid, dtype=float))
    eta = np.einsum("ndg,dg->n", x, beta_values * wts[None, :])
    if alpha0.size:
        eta = eta + z @ alpha0
    rng = _rng_for(seed, 2)
    realized = alpha0.copy()
    if family == "gaussian-normal":
        y = eta + rng.standard_normal(n)
    elif family == "gaussian-t3":
        # Var(t_3) = 3, so divide by sqrt(3) for unit-variance errors
        y = eta + rng.standard_t(3, size=n) / np.sqrt(3.0)
    elif family == "logistic":
        shift = _balance_shift(eta)
        eta = eta + shift
        if realized.size:
            realized[0] += shift
        else:
            realized = np.array([shift])
        y = (rng.uniform(size=n) < expit(eta)).astype(float)
    else:
        raise ValueError(f"unknown outcome family {family!r}")
    return y, realized


def _balance_shift(eta: np.ndarray, target: float = 0.5, tol: float = 1e-6) -> float:
    """Bisection for the intercept shift making mean(expit(eta + shift)) = target."""
    lo, hi = -60.0, 60.0
    if np.mean(expit(eta + lo)) > target or np.mean(expit(eta + hi)) < target:
        raise NumericalError(
            "cannot balance outcome probabilities: predictors are all extreme"
        )
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.mean(expit(eta + mid)) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    shift = 0.5 * (lo + hi)
    if abs(np.mean(expit(eta + shift)) - target) > tol:
        raise NumericalError("intercept balancing did not reach the target rate")
    return shift


@dataclass
class ScenarioConfig:
    """One simulation scenario: sizes, predictor kind, signal map, and seed.

    ``c_coeffs`` maps 0-based channel indices to the scale of their Fourier
    coefficient curve; unlisted channels have identically zero coefficients.
    ``alpha0`` of length q >= 1 puts an intercept first; empty means no
    baseline covariates.
    """

    n: int
    d: int
    family: str = "gaussian-normal"
    c_coeffs: dict = field(default_factory=dict)
    grid_size: int = 100
    x_kind: str = "uncorrelated"
    target_corr: float = 0.6
    alpha0: tuple = (5.0, -1.0, 2.0)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if self.family not in ("gaussian-normal", "gaussian-t3", "logistic"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.x_kind not in ("uncorrelated", "correlated_surrogate"):
            raise ValueError(f"unknown x_kind {self.x_kind!r}")
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        bad = [j for j in self.c_coeffs if not 0 <= int(j) < self.d]
        if bad:
            raise ValueError(f"c_coeffs channels out of range: {bad}")

    @property
    def q(self) -> int:
        return len(self.alpha0) if self.alpha0 else 0


def _baseline_matrix(n: int, q: int, rng: np.random.Generator) -> np.ndarray:
    """Intercept, one standard normal, one Bernoulli(0.5), then extra normals."""
    if q == 0:
        return np.zeros((n, 0))
    cols = [np.ones(n)]
    if q >= 2:
        cols.append(rng.standard_normal(n))
    if q >= 3:
        cols.append((rng.uniform(size=n) < 0.5).astype(float))
    for _ in range(q - 3):
        cols.append(rng.standard_normal(n))
    return np.column_stack(cols[:q])


def build_scenario(config: ScenarioConfig):
    """Generate one dataset plus the ground truth used for scoring.

    Returns (dataset, truth) where truth carries the realized baseline
    coefficients, the coefficient curves (d, G), and the signal map.
    """
    grid = np.linspace(0.0, 1.0, config.grid_size)
    x_rng = _rng_for(config.seed, 0)
    z_rng = _rng_for(config.seed, 1)
    x = _gen_x_batch(
        config.n, config.d, grid, x_rng, config.x_kind, config.target_corr
    )
    z = _baseline_matrix(config.n, config.q, z_rng)
    beta = np.zeros((config.d, config.grid_size))
    for j, c in config.c_coeffs.items():
        if c != 0.0:
            beta[int(j)] = fourier_beta(float(c), grid).values[0]
    alpha0 = np.asarray(config.alpha0, dtype=float) if config.q else np.zeros(0)
    y, realized_alpha0 = gen_outcome(
        x, grid, z, beta, alpha0, config.family, config.seed
    )
    dataset = FunctionalDataset(y=y, z=z, x=x, grid=grid)
    truth = {
        "alpha0": realized_alpha0,
        "beta": beta,
        "c_coeffs": dict(config.c_coeffs),
        "grid": grid,
    }
    return dataset, truth
