"""K-fold cross-validation over (basis size, penalty) grids."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .cprsm import CprsmConfig, fit
from .errors import NumericalError
from .glm import Family, FunctionalDataset, build_design, loss
from .bspline import build_basis
from .penalty import ScadPenalty

__all__ = ["CvPlan", "kfold_split", "cv_select", "default_lambda_grid"]

LINEAR_LAMBDA_GRID = tuple(np.round(np.arange(0.0, 1.5001, 0.1), 10))
LOGISTIC_LAMBDA_GRID = (0.0, 0.05, 0.1, 0.2, 0.3, 0.4)


def default_lambda_grid(family: Family):
    return LINEAR_LAMBDA_GRID if family.kind == "gaussian" else LOGISTIC_LAMBDA_GRID


@dataclass
class CvPlan:
    """Fold count, candidate grids, and the shuffle seed."""

    folds: int = 10
    n_grid: tuple = (4, 6, 8, 10, 12)
    lambda_grid: tuple = None  # None -> family default
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if not self.n_grid:
            raise ValueError("n_grid must be nonempty")
        if self.lambda_grid is not None and not len(self.lambda_grid):
            raise ValueError("lambda_grid must be nonempty when given")


def kfold_split(n: int, k: int, seed: int):
    """Seeded shuffle split into k folds whose sizes differ by at most one."""
    if k < 2 or k > n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def cv_select(
    dataset: FunctionalDataset,
    family: Family,
    penalty_a: float,
    test_set_M,
    plan: CvPlan,
    config: CprsmConfig = CprsmConfig(),
    basis_order: int = 4,
):
    """Pick (N, lambda) minimizing held-out mean negative log-likelihood.

    Returns (best_N, best_lambda, cv_table) where the table has one row per
    grid point: (N, lambda, mean_score, n_failed_folds).  Grid points whose
    folds all fail score +inf.  Ties break toward smaller N, then smaller
    lambda.
    """
    lam_grid = plan.lambda_grid
    if lam_grid is None:
        lam_grid = default_lambda_grid(family)
    folds = kfold_split(dataset.n, plan.folds, plan.seed)
    all_idx = np.arange(dataset.n)
    table = []
    best = None
    for N in sorted(plan.n_grid):
        basis = build_basis(basis_order, N - basis_order)
        for lam in sorted(lam_grid):
            scores = []
            failed = 0
            for heldout in folds:
                train = np.setdiff1d(all_idx, heldout)
                try:
                    res = fit(
                        dataset.take(train),
                        basis,
                        family,
                        ScadPenalty(lam=float(lam), a=penalty_a),
                        test_set_M=test_set_M,
                        config=config,
                    )
                    test_design = build_design(dataset.take(heldout), basis)
                    scores.append(
                        loss(test_design, dataset.y[heldout], family, res.theta_hat)
                    )
                except NumericalError:
                    failed += 1
            if scores:
                mean_score = float(np.mean(scores))
            else:
                mean_score = np.inf
                warnings.warn(
                    f"all folds failed at N={N}, lambda={lam}; scored +inf",
                    RuntimeWarning,
                )
            table.append((int(N), float(lam), mean_score, failed))
            if best is None or mean_score < best[2]:
                best = (int(N), float(lam), mean_score)
    return best[0], best[1], table
