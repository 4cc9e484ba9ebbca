import numpy as np
import pytest

from hdfp.bspline import basis_matrix, build_basis
from hdfp.cprsm import CprsmConfig, fit, gamma_update, project_feasible, theta_update
from hdfp.errors import ConfigError
from hdfp.glm import (
    GAUSSIAN,
    LOGISTIC,
    FunctionalDataset,
    ThetaVector,
    build_design,
    gradient,
    loss,
)
from hdfp.penalty import ScadPenalty, group_prox


def make_dataset(rng, n=120, d=3, q=2, G=60, signal=None, family="gaussian"):
    """Functional data with spline-smooth predictors of realistic scale."""
    grid = np.linspace(0.0, 1.0, G)
    gen_basis = build_basis(4, 6)
    E = basis_matrix(gen_basis, grid)
    xi = rng.normal(0.0, 5.0, size=(n, d, gen_basis.size))
    x = xi @ E.T + 0.5 * rng.normal(size=(n, d, G))
    z = rng.normal(size=(n, q)) if q else np.zeros((n, 0))
    eta = z @ np.linspace(1.0, -1.0, q) if q else np.zeros(n)
    if signal is not None:
        for j, fn in signal.items():
            eta = eta + np.trapezoid(x[:, j, :] * fn(grid), grid)
    if family == "gaussian":
        y = eta + rng.normal(size=n)
    else:
        y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return FunctionalDataset(y=y, z=z, x=x, grid=grid)


def mixed_norm(theta: ThetaVector) -> float:
    blocks = theta.gamma_scaled.reshape(theta.d, theta.basis_size)
    return float(np.abs(theta.alpha).sum() + np.linalg.norm(blocks, axis=1).sum())


def projection_oracle(theta: ThetaVector, radius: float) -> ThetaVector:
    """Projection onto the mixed-norm ball by dense grid plus KKT bisection.

    The KKT stationarity of the projection is soft-thresholding of the
    baseline entries and of the group norms by a common multiplier nu >= 0,
    with nu chosen so the constraint is active.
    """
    q, d, N = theta.q, theta.d, theta.basis_size
    if mixed_norm(theta) <= radius:
        return theta

    alpha = theta.alpha
    blocks = theta.gamma_scaled.reshape(d, N)
    norms = np.linalg.norm(blocks, axis=1)

    def shrunken_total(nu):
        return (
            np.maximum(np.abs(alpha) - nu, 0.0).sum()
            + np.maximum(norms - nu, 0.0).sum()
        )

    hi = max(np.abs(alpha).max(initial=0.0), norms.max(initial=0.0))
    grid = np.linspace(0.0, hi, 100_000)
    totals = np.array([shrunken_total(nu) for nu in grid])
    i = int(np.searchsorted(-totals, -radius))
    lo_nu, hi_nu = grid[max(i - 1, 0)], grid[min(i, grid.size - 1)]
    for _ in range(200):
        mid = 0.5 * (lo_nu + hi_nu)
        if shrunken_total(mid) > radius:
            lo_nu = mid
        else:
            hi_nu = mid
    nu = 0.5 * (lo_nu + hi_nu)
    new_alpha = np.sign(alpha) * np.maximum(np.abs(alpha) - nu, 0.0)
    scale = np.zeros(d)
    pos = norms > 0
    scale[pos] = np.maximum(norms[pos] - nu, 0.0) / norms[pos]
    flat = np.concatenate([new_alpha, (blocks * scale[:, None]).ravel()])
    return ThetaVector(flat, q, d, N)


class TestThetaUpdate:
    def test_large_beta_pins_functional_block(self):
        rng = np.random.default_rng(0)
        ds = make_dataset(rng, n=150, d=2, q=2)
        basis = build_basis(4, 2)
        design = build_design(ds, basis)
        cfg = CprsmConfig(pen_beta=1e6)
        theta = theta_update(
            design, ds.y, GAUSSIAN, np.zeros((2, basis.size)), np.zeros(2 * basis.size), cfg
        )
        assert np.abs(theta.gamma_scaled).max() < 1e-3
        alpha_ls, *_ = np.linalg.lstsq(ds.z, ds.y, rcond=None)
        np.testing.assert_allclose(theta.alpha, alpha_ls, atol=1e-3)

    def test_augmented_gradient_vanishes_gaussian(self):
        rng = np.random.default_rng(1)
        ds = make_dataset(rng, n=100, d=2, q=1)
        basis = build_basis(4, 1)
        design = build_design(ds, basis)
        cfg = CprsmConfig(pen_beta=2.0)
        gamma = rng.normal(size=(2, basis.size))
        rho = rng.normal(size=2 * basis.size)
        theta = theta_update(design, ds.y, GAUSSIAN, gamma, rho, cfg)
        g = gamma.ravel() / np.sqrt(basis.size)
        grad = gradient(design, ds.y, GAUSSIAN, theta)
        grad[design.q :] += cfg.pen_beta * (theta.gamma_scaled - g) - rho
        assert np.linalg.norm(grad) < 1e-10

    def test_logistic_intercept_matches_bisection_oracle(self):
        rng = np.random.default_rng(2)
        n, G = 100, 40
        grid = np.linspace(0, 1, G)
        ds = FunctionalDataset(
            y=np.repeat([0.0, 1.0], n // 2),
            z=np.ones((n, 1)),
            x=np.zeros((n, 1, G)),
            grid=grid,
        )
        basis = build_basis(4, 0)
        design = build_design(ds, basis)
        cfg = CprsmConfig(pen_beta=1.0, newton_tol=1e-12, newton_iters=50)
        theta = theta_update(
            design, ds.y, LOGISTIC, np.zeros((1, basis.size)), np.zeros(basis.size), cfg
        )
        # balanced outcomes: stationarity expit(a) = mean(y) at a = 0
        lo, hi = -10.0, 10.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if 1.0 / (1.0 + np.exp(-mid)) < ds.y.mean():
                lo = mid
            else:
                hi = mid
        assert theta.alpha[0] == pytest.approx(0.5 * (lo + hi), abs=1e-6)
        assert theta.alpha[0] == pytest.approx(0.0, abs=1e-6)
        assert np.abs(theta.gamma_scaled).max() < 1e-9


class TestProjectFeasible:
    def test_interior_point_unchanged(self):
        theta = ThetaVector(np.array([0.5, -0.25, 0.1, 0.1, 0.0, 0.0]), 2, 2, 2)
        out = project_feasible(theta, radius_R=10.0)
        np.testing.assert_array_equal(out.flat, theta.flat)

    def test_zero_stays_zero(self):
        theta = ThetaVector.zeros(2, 3, 4)
        out = project_feasible(theta, radius_R=1.0)
        assert np.all(out.flat == 0.0)

    def test_matches_qp_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            theta = ThetaVector(rng.normal(0, 1, 2 + 3 * 4), q=2, d=3, basis_size=4)
            mine = project_feasible(theta, radius_R=1.0)
            oracle = projection_oracle(theta, radius=1.0)
            diff = ThetaVector(mine.flat - oracle.flat, 2, 3, 4)
            assert mixed_norm(diff) < 1e-6
            assert mixed_norm(mine) <= 1.0 + 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        theta = ThetaVector(rng.normal(0, 2, 2 + 3 * 4), q=2, d=3, basis_size=4)
        once = project_feasible(theta, radius_R=1.5)
        twice = project_feasible(once, radius_R=1.5)
        np.testing.assert_array_equal(once.flat, twice.flat)

    def test_nonexpansive_in_surrogate_norm(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            a = ThetaVector(rng.normal(0, 2, 2 + 2 * 3), 2, 2, 3)
            b = ThetaVector(rng.normal(0, 2, 2 + 2 * 3), 2, 2, 3)
            pa = project_feasible(a, radius_R=1.0)
            pb = project_feasible(b, radius_R=1.0)
            dist_before = mixed_norm(ThetaVector(a.flat - b.flat, 2, 2, 3))
            dist_after = mixed_norm(ThetaVector(pa.flat - pb.flat, 2, 2, 3))
            assert dist_after <= dist_before + 1e-10


class TestGammaUpdate:
    def setup_method(self):
        rng = np.random.default_rng(6)
        self.theta = ThetaVector(rng.normal(size=1 + 3 * 4), q=1, d=3, basis_size=4)
        self.rho = rng.normal(size=3 * 4)
        self.cfg = CprsmConfig(pen_beta=2.0)

    def test_lambda_zero_reproduces_affine_map(self):
        pen = ScadPenalty(lam=0.0)
        gamma = gamma_update(self.theta, self.rho, pen, (), self.cfg)
        v = self.theta.gamma_scaled - self.rho / self.cfg.pen_beta
        np.testing.assert_array_equal(gamma.ravel() / 2.0, v)  # sqrt(N) = 2

    def test_huge_lambda_zeroes_only_penalized_groups(self):
        pen = ScadPenalty(lam=1e6)
        gamma = gamma_update(self.theta, self.rho, pen, (1,), self.cfg)
        v = (self.theta.gamma_scaled - self.rho / self.cfg.pen_beta).reshape(3, 4)
        assert np.all(gamma[0] == 0.0)
        assert np.all(gamma[2] == 0.0)
        np.testing.assert_array_equal(gamma[1] / 2.0, v[1])

    def test_single_group_composition(self):
        pen = ScadPenalty(lam=0.6)
        theta = ThetaVector(self.theta.flat[: 1 + 4], q=1, d=1, basis_size=4)
        rho = self.rho[:4]
        gamma = gamma_update(theta, rho, pen, (), self.cfg)
        v = theta.gamma_scaled - rho / self.cfg.pen_beta
        expected = 2.0 * group_prox(v, pen, self.cfg.pen_beta)
        np.testing.assert_allclose(gamma[0], expected, atol=1e-15)


class TestFit:
    def test_unpenalized_matches_normal_equations(self):
        rng = np.random.default_rng(7)
        ds = make_dataset(rng, n=250, d=2, q=2)
        basis = build_basis(4, 2)
        cfg = CprsmConfig(tol=1e-9, max_iter=20000, pen_beta=0.5)
        res = fit(ds, basis, GAUSSIAN, ScadPenalty(0.0), config=cfg)
        design = build_design(ds, basis)
        theta_ls, *_ = np.linalg.lstsq(design.w, ds.y, rcond=None)
        assert np.linalg.norm(res.theta_hat.flat - theta_ls) < 1e-4
        assert res.converged

    def test_unpenalized_logistic_matches_damped_newton(self):
        rng = np.random.default_rng(8)
        signal = {0: lambda s: 0.2 * np.sin(2 * np.pi * s)}
        ds = make_dataset(rng, n=400, d=1, q=1, signal=signal, family="logistic")
        basis = build_basis(4, 0)
        cfg = CprsmConfig(tol=1e-10, max_iter=20000, pen_beta=0.5)
        res = fit(ds, basis, LOGISTIC, ScadPenalty(0.0), config=cfg)
        design = build_design(ds, basis)
        # damped Newton oracle on the plain GLM loss
        theta = np.zeros(design.num_cols)
        for _ in range(200):
            g = gradient(design, ds.y, LOGISTIC, theta)
            if np.linalg.norm(g) < 1e-12:
                break
            eta = design.w @ theta
            p = 1.0 / (1.0 + np.exp(-eta))
            H = design.w.T @ ((p * (1 - p))[:, None] * design.w) / ds.n
            step = np.linalg.solve(H, g)
            t, f0 = 1.0, loss(design, ds.y, LOGISTIC, theta)
            while loss(design, ds.y, LOGISTIC, theta - t * step) > f0 and t > 1e-8:
                t /= 2
            theta = theta - t * step
        assert np.linalg.norm(res.theta_hat.flat - theta) < 1e-4

    def test_fixed_point_initialization_converges_immediately(self):
        rng = np.random.default_rng(9)
        ds = make_dataset(rng, n=150, d=2, q=1)
        basis = build_basis(4, 1)
        cfg = CprsmConfig(tol=5e-4, max_iter=2000, pen_beta=1.0)
        first = fit(ds, basis, GAUSSIAN, ScadPenalty(0.0), config=CprsmConfig(tol=1e-12, max_iter=30000, pen_beta=1.0))
        again = fit(ds, basis, GAUSSIAN, ScadPenalty(0.0), config=cfg, init=first.theta_hat)
        assert again.converged
        assert again.iterations <= 2

    def test_feasibility_and_exact_zero_support(self):
        rng = np.random.default_rng(10)
        signal = {0: lambda s: 2.0 * np.cos(np.pi * s)}
        ds = make_dataset(rng, n=150, d=4, q=1, signal=signal)
        basis = build_basis(4, 2)
        res = fit(ds, basis, GAUSSIAN, ScadPenalty(0.5), test_set_M=(1,))
        assert 1 not in res.active_set
        outside = [j for j in range(4) if j not in res.active_set and j != 1]
        for j in outside:
            assert np.all(res.gamma_hat[j] == 0.0)
        assert mixed_norm(res.theta_hat) <= CprsmConfig().radius_R + 1e-8

    def test_deterministic_repeat(self):
        rng = np.random.default_rng(11)
        ds = make_dataset(rng, n=100, d=3, q=1)
        basis = build_basis(4, 1)
        res1 = fit(ds, basis, GAUSSIAN, ScadPenalty(0.3))
        res2 = fit(ds, basis, GAUSSIAN, ScadPenalty(0.3))
        np.testing.assert_array_equal(res1.theta_hat.flat, res2.theta_hat.flat)
        np.testing.assert_array_equal(res1.gamma_hat, res2.gamma_hat)
        assert res1.iterations == res2.iterations

    def test_nonconvergence_reported_not_raised(self):
        rng = np.random.default_rng(12)
        ds = make_dataset(rng, n=60, d=2, q=1)
        basis = build_basis(4, 1)
        res = fit(
            ds, basis, GAUSSIAN, ScadPenalty(0.2), config=CprsmConfig(max_iter=2, tol=1e-14)
        )
        assert not res.converged
        assert res.iterations == 2

    def test_validates_group_indices_and_beta(self):
        rng = np.random.default_rng(13)
        ds = make_dataset(rng, n=40, d=2, q=1)
        basis = build_basis(4, 1)
        with pytest.raises(ValueError):
            fit(ds, basis, GAUSSIAN, ScadPenalty(0.1), test_set_M=(5,))
        with pytest.raises(ConfigError):
            fit(
                ds,
                basis,
                GAUSSIAN,
                ScadPenalty(0.1, a=3.7),
                config=CprsmConfig(pen_beta=0.3),
            )


class TestSupportScreening:
    def test_noise_groups_screened_out(self):
        """Strong signal on one group: cross-validated penalty removes the rest."""
        from hdfp.tuning import CvPlan, cv_select

        rng = np.random.default_rng(100)
        signal = {0: lambda s: 3.0 * np.sin(2 * np.pi * s) + 1.0}
        pilot = make_dataset(rng, n=100, d=5, q=1, signal=signal)
        plan = CvPlan(folds=10, n_grid=(6,), lambda_grid=tuple(np.arange(0.0, 0.9, 0.1)), seed=5)
        best_n, best_lam, _ = cv_select(pilot, GAUSSIAN, 3.7, (), plan)
        basis = build_basis(4, best_n - 4)
        pen = ScadPenalty(best_lam)
        clean = 0
        reps = 100
        for rep in range(reps):
            rng_rep = np.random.default_rng((123, rep))
            ds = make_dataset(rng_rep, n=100, d=5, q=1, signal=signal)
            res = fit(ds, basis, GAUSSIAN, pen)
            if all(j not in res.active_set for j in range(1, 5)):
                clean += 1
        assert clean >= 95
