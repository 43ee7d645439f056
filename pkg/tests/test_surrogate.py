from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from priorbo.bench import branin_batch, get_benchmark
from priorbo.history import TrialHistory
from priorbo.space import Categorical, Continuous, SearchSpace
from priorbo.surrogate import (default_kind, fit_feasibility, fit_feasibility_from_history,
                               fit_gp, fit_rf, fit_surrogate, log_marginal_likelihood)
from priorbo.surrogate.forest import SIGMA_FLOOR, RfFit
from priorbo.surrogate.gp import matern52

BRANIN = get_benchmark("branin").space


def _branin_data(n, seed):
    rng = np.random.default_rng(seed)
    U = rng.random((n, 2))
    return U, branin_batch(np.column_stack([-5 + 15 * U[:, 0], 15 * U[:, 1]]))


def fd_gradient(f, theta, h=1e-6):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


class TestKernel:
    def test_matern_at_zero_distance(self):
        X = np.random.default_rng(0).random((4, 3))
        K = matern52(X, X, np.ones(3), 2.5)
        np.testing.assert_allclose(np.diag(K), 2.5)

    def test_matern_known_value(self):
        # r = 1: (1 + sqrt5 + 5/3) exp(-sqrt5)
        K = matern52(np.zeros((1, 1)), np.ones((1, 1)), np.ones(1), 1.0)
        expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
        assert K[0, 0] == pytest.approx(expected, rel=1e-12)


class TestMllGradient:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(50):
            n, d = rng.integers(3, 15), rng.integers(1, 4)
            X = rng.random((n, d))
            y = rng.standard_normal(n)
            theta = np.r_[rng.uniform(np.log(0.05), np.log(2.0), d),
                          rng.uniform(-1, 1), rng.uniform(np.log(1e-3), np.log(1e-1))]
            _, g = log_marginal_likelihood(theta, X, y)
            num = fd_gradient(lambda t: log_marginal_likelihood(t, X, y, with_grad=False), theta)
            rel = np.abs(g - num) / np.maximum(np.abs(num), 1e-6)
            worst = max(worst, rel.max())
        assert worst < 1e-4


class TestGpFit:
    def test_interpolates_noise_free_targets(self):
        X = np.array([[0.1], [0.5], [0.9]])
        y = np.array([1.0, 2.0, 3.0])
        fit = fit_gp(X, y, np.random.default_rng(0), noise_var=1e-8)
        mu, sd = fit.predict(X)
        np.testing.assert_allclose(mu, y, atol=1e-6)
        assert np.all(sd < 1e-3)

    def test_repeated_input_needs_noise(self):
        X = np.array([[0.3], [0.3], [0.8]])
        y = np.array([0.0, 1.0, 0.5])
        fit = fit_gp(X, y, np.random.default_rng(0))
        assert fit.noise_var > 1e-6

    def test_beats_constant_predictor_on_branin(self):
        wins = 0
        for seed in range(5):
            U, y = _branin_data(30, seed)
            Ut, yt = _branin_data(100, seed + 100)
            fit = fit_gp(U, y, np.random.default_rng(seed))
            rmse = np.sqrt(np.mean((fit.predict(Ut)[0] - yt) ** 2))
            wins += rmse < np.sqrt(np.mean((y.mean() - yt) ** 2))
        assert wins >= 3

    def test_reverts_to_prior_far_away(self):
        X = np.array([[0.0], [0.01], [0.02]])
        y = np.array([0.0, 1.0, 0.5])
        fit = fit_gp(X, y, np.random.default_rng(0))
        far = np.array([[0.02 + 10 * fit.lengthscales[0]]])
        _, sd = fit.predict(far)
        assert sd[0] == pytest.approx(math.sqrt(fit.signal_var) * fit.y_std, rel=0.05)

    def test_uncertainty_lowest_at_data(self):
        X = np.array([[0.2], [0.5], [0.7]])
        fit = fit_gp(X, np.array([1.0, -1.0, 0.5]), np.random.default_rng(0))
        _, sd_train = fit.predict(X)
        grid = np.linspace(0, 1, 201)[:, None]
        far = grid[np.min(np.abs(grid - X.T), axis=1) > 0.02]
        assert sd_train.max() <= fit.predict(far)[1].min()

    def test_affine_equivariance(self):
        U, y = _branin_data(15, 0)
        Ut, _ = _branin_data(20, 1)
        a = fit_gp(U, y, np.random.default_rng(3))
        b = fit_gp(U, 3.0 * y + 7.0, np.random.default_rng(3))
        mu_a, sd_a = a.predict(Ut)
        mu_b, sd_b = b.predict(Ut)
        np.testing.assert_allclose(mu_b, 3.0 * mu_a + 7.0, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(sd_b, 3.0 * sd_a, rtol=1e-6, atol=1e-8)

    def test_deterministic_given_seed(self):
        U, y = _branin_data(12, 4)
        a = fit_gp(U, y, np.random.default_rng(9))
        b = fit_gp(U, y, np.random.default_rng(9))
        np.testing.assert_array_equal(a.lengthscales, b.lengthscales)

    def test_hyperparameters_in_bounds(self):
        U, y = _branin_data(20, 5)
        fit = fit_gp(U, y, np.random.default_rng(0))
        assert np.all((fit.lengthscales >= 1e-3 * (1 - 1e-9)) & (fit.lengthscales <= 10.0 * (1 + 1e-9)))
        assert 1e-8 * (1 - 1e-9) <= fit.noise_var <= 1e-1 * (1 + 1e-9)


class TestForest:
    def test_constant_targets(self):
        X = np.random.default_rng(0).random((10, 2))
        fit = fit_rf(X, np.full(10, 4.2), np.random.default_rng(0))
        mu, sd = fit.predict(np.random.default_rng(1).random((5, 2)))
        np.testing.assert_allclose(mu, 4.2)
        np.testing.assert_allclose(sd, SIGMA_FLOOR)

    def test_identical_trees_use_leaf_variance_only(self):
        X = np.random.default_rng(0).random((30, 1))
        y = np.sin(6 * X[:, 0])
        one = fit_rf(X, y, np.random.default_rng(0), n_trees=1)
        twin = RfFit([one.trees[0]] * 4)
        Q = np.random.default_rng(1).random((20, 1))
        _, var = one.trees[0].predict(Q)
        np.testing.assert_allclose(twin.predict(Q)[1], np.maximum(np.sqrt(var), SIGMA_FLOOR))

    def test_categorical_separable(self):
        space = SearchSpace((Categorical("c", ("a", "b")),))
        h = TrialHistory(space)
        for v, y in [("a", 1.0), ("a", 1.0), ("a", 1.0), ("b", 5.0), ("b", 5.0), ("b", 5.0)]:
            h.add({"c": v}, y)
        fit = fit_surrogate(h, default_kind(space), np.random.default_rng(0))
        mu, _ = fit.predict(np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(mu, [1.0, 5.0])

    def test_beats_constant_on_branin(self):
        U, y = _branin_data(100, 0)
        Ut, yt = _branin_data(200, 1)
        fit = fit_rf(U, y, np.random.default_rng(0))
        rmse = np.sqrt(np.mean((fit.predict(Ut)[0] - yt) ** 2))
        assert rmse < np.sqrt(np.mean((y.mean() - yt) ** 2))

    def test_deterministic_given_seed(self):
        U, y = _branin_data(40, 2)
        Q, _ = _branin_data(10, 3)
        a = fit_rf(U, y, np.random.default_rng(5)).predict(Q)
        b = fit_rf(U, y, np.random.default_rng(5)).predict(Q)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_min_samples_split(self):
        X = np.array([[0.1], [0.2], [0.3], [0.9]])
        fit = fit_rf(X, np.array([0.0, 1.0, 2.0, 3.0]), np.random.default_rng(0))
        # four points cannot be split with a minimum of five
        mu, _ = fit.predict(X)
        np.testing.assert_allclose(mu, 1.5)


class TestFeasibility:
    def test_all_feasible_constant(self):
        fit = fit_feasibility(np.random.default_rng(0).random((10, 2)), np.ones(10, bool),
                              np.random.default_rng(0))
        np.testing.assert_array_equal(fit.feasible_prob(np.random.default_rng(1).random((5, 2))), 1)

    def test_separable_1d(self):
        X = np.linspace(0, 1, 50)[:, None]
        fit = fit_feasibility(X, X[:, 0] < 0.5, np.random.default_rng(0))
        assert fit.feasible_prob(np.array([[0.1]]))[0] > 0.9
        assert fit.feasible_prob(np.array([[0.9]]))[0] < 0.5

    def test_infeasible_training_point(self):
        rng = np.random.default_rng(0)
        X = rng.random((30, 2))
        feas = X[:, 0] + X[:, 1] < 1.0
        fit = fit_feasibility(X, feas, np.random.default_rng(1))
        bad = X[~feas][0]
        assert fit.feasible_prob(bad[None, :])[0] < 0.5

    def test_history_wrapper_uses_all_rows(self):
        space = SearchSpace((Continuous("x", 0, 1),))
        h = TrialHistory(space)
        for x in np.linspace(0, 1, 20):
            h.add({"x": x}, float(x), feasible=x < 0.5)
        fit = fit_feasibility_from_history(h, np.random.default_rng(0))
        assert fit.feasible_prob(np.array([[0.05]]))[0] > 0.5


class TestFitSurrogate:
    def test_excludes_infeasible_rows(self):
        space = SearchSpace((Continuous("x", 0, 1),))
        h = TrialHistory(space)
        h.add({"x": 0.1}, 1.0)
        h.add({"x": 0.5}, float("nan"))
        h.add({"x": 0.9}, 3.0)
        h.add({"x": 0.7}, 100.0, feasible=False)
        fit = fit_surrogate(h, "gp", np.random.default_rng(0))
        assert fit.X.shape == (2, 1)

    def test_needs_two_rows(self):
        space = SearchSpace((Continuous("x", 0, 1),))
        h = TrialHistory(space)
        h.add({"x": 0.1}, 1.0)
        with pytest.raises(ValueError):
            fit_surrogate(h, "gp", np.random.default_rng(0))

    def test_gp_needs_continuous(self):
        space = SearchSpace((Categorical("c", ("a", "b")),))
        h = TrialHistory(space)
        h.add({"c": "a"}, 1.0)
        h.add({"c": "b"}, 2.0)
        with pytest.raises(ValueError):
            fit_surrogate(h, "gp", np.random.default_rng(0))


@given(n=st.integers(2, 12), seed=st.integers(0, 10_000))
def test_gp_sigma_nonnegative_and_finite(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 2))
    y = rng.standard_normal(n)
    fit = fit_gp(X, y, rng, n_restarts=2)
    mu, sd = fit.predict(rng.random((50, 2)))
    assert np.all(np.isfinite(mu)) and np.all(sd >= 0)
