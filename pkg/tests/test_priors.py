from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from priorbo.bench import branin_batch, get_benchmark
from priorbo.priors import (EPS, KDE, Beta, DiscreteWeights, Exponential, FactorizedPrior,
                            GaussianTrunc, JointKdePrior, Mixture, PriorStateError, Uniform,
                            build_kde_prior, build_misleading_prior, build_synthetic_prior,
                            density_bad, density_good, kde_bandwidth_factor,
                            prior_from_space_dict, spec_from_dict)
from priorbo.space import Categorical, Continuous, Ordinal, SearchSpace

BRANIN = get_benchmark("branin").space
LINE = SearchSpace((Continuous("x", -5.0, 10.0),))
FLAG = SearchSpace((Categorical("flag", ("false", "true")),))


def _prior_1d(spec, space=LINE):
    return FactorizedPrior(space, [spec])


class TestDensityGood:
    def test_uniform_scales_to_one(self):
        prior = FactorizedPrior.uniform(BRANIN)
        U = np.random.default_rng(0).random((50, 2))
        np.testing.assert_array_equal(prior.density_good(U), 1.0)

    def test_beta_mode_maps_to_one(self):
        prior = _prior_1d(Beta(3, 3))
        assert density_good(prior, {"x": 2.5}) == pytest.approx(1.0, abs=1e-12)

    def test_discrete_weights_min_max(self):
        prior = FactorizedPrior(FLAG, [DiscreteWeights((0.1, 0.9))])
        assert density_good(prior, {"flag": "true"}) == 1.0
        assert density_good(prior, {"flag": "false"}) == EPS

    def test_uncalibrated_raises(self):
        prior = FactorizedPrior(LINE, [Beta(3, 3)], calibrate=False)
        with pytest.raises(PriorStateError):
            prior.density_good([[0.5]])

    def test_factorized_product_before_scaling(self):
        specs = [Beta(2, 5), GaussianTrunc(0.3, 0.2)]
        prior = FactorizedPrior(BRANIN, specs)
        U = np.random.default_rng(1).random((200, 2))
        expected = specs[0].pdf(U[:, 0]) * specs[1].pdf(U[:, 1])
        np.testing.assert_allclose(prior.raw_density(U), expected, rtol=1e-12)
        np.testing.assert_allclose(specs[0].pdf(U[:, 0]), stats.beta(2, 5).pdf(U[:, 0]))


class TestDensityBad:
    def test_complement_clamp_at_mode(self):
        prior = _prior_1d(Beta(3, 3))
        assert density_bad(prior, {"x": 2.5}) == EPS

    def test_complement_value(self):
        prior = _prior_1d(Beta(3, 3))
        # find a grid point with scaled density 0.25 and check its complement
        U = np.linspace(0, 1, 100_001)[:, None]
        g = prior.density_good(U)
        i = int(np.argmin(np.abs(g - 0.25)))
        assert prior.density_bad(U[i])[0] == pytest.approx(1 - g[i], abs=1e-12)

    def test_discrete_renormalized(self):
        prior = FactorizedPrior(FLAG, [DiscreteWeights((0.1, 0.9))])
        bad = prior.density_bad(np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(bad, np.array([1 - EPS, EPS]) / (1.0 + 0 * EPS), rtol=1e-9)
        assert bad.sum() == pytest.approx(1.0, abs=1e-9)

    def test_discrete_large_space_closed_form(self):
        space = SearchSpace(tuple(Ordinal(f"o{i}", tuple(range(10))) for i in range(6)))
        rng = np.random.default_rng(3)
        specs = [DiscreteWeights(tuple(w / w.sum())) for w in rng.random((6, 10)) + 0.1]
        prior = FactorizedPrior(space, specs)
        assert space.cardinality() == 10**6
        # the bad mass over the space, computed by streaming enumeration, is 1
        total = 0.0
        grid = np.linspace(0, 1, 10)
        head = np.stack(np.meshgrid(*[grid] * 5, indexing="ij"), -1).reshape(-1, 5)
        for v in grid:
            U = np.column_stack([head, np.full(len(head), v)])
            total += prior.density_bad(U).sum()
        assert total == pytest.approx(1.0, rel=1e-6)


class TestSampling:
    def test_degenerate_gaussian_at_lower_bound(self):
        prior = _prior_1d(GaussianTrunc(0.0, 1e-6))
        x = np.array([p["x"] for p in prior.sample(1000, np.random.default_rng(0))])
        np.testing.assert_allclose(x, -5.0, atol=1e-3)

    def test_discrete_weights_frequency(self):
        space = SearchSpace((Ordinal("lp", (1, 2, 3, 4, 5)),))
        prior = FactorizedPrior(space, [DiscreteWeights((0.4, 0.065, 0.07, 0.065, 0.4))])
        vals = np.array([p["lp"] for p in prior.sample(100_000, np.random.default_rng(0))])
        assert abs(np.mean(vals == 1) - 0.4) < 0.01

    def test_beta_mean_at_midpoint(self):
        prior = _prior_1d(Beta(3, 3))
        x = prior.sample_unit(100_000, np.random.default_rng(0))[:, 0]
        assert abs(x.mean() - 0.5) < 0.01

    @pytest.mark.parametrize("spec,cdf", [
        (Uniform(), stats.uniform().cdf),
        (GaussianTrunc(0.3, 0.2), stats.truncnorm(-0.3 / 0.2, 0.7 / 0.2, loc=0.3, scale=0.2).cdf),
        (GaussianTrunc(0.98, 0.01), stats.truncnorm(-98, 2, loc=0.98, scale=0.01).cdf),
        (GaussianTrunc(1.5, 0.3), stats.truncnorm(-5, -5 / 3, loc=1.5, scale=0.3).cdf),
        (Beta(3, 3), stats.beta(3, 3).cdf),
        (Beta(0.5, 2), stats.beta(0.5, 2).cdf),
    ])
    def test_ks(self, spec, cdf):
        x = spec.sample(100_000, np.random.default_rng(7))
        assert stats.kstest(x, cdf).statistic < 0.02

    def test_exponential_ks(self):
        spec = Exponential(10.0, "increasing")
        x = spec.sample(100_000, np.random.default_rng(8))
        cdf = lambda u: np.expm1(10 * u) / np.expm1(10)  # noqa: E731
        assert stats.kstest(x, cdf).statistic < 0.02

    def test_kde_samples_near_centres(self):
        spec = KDE((0.2, 0.8), 0.01)
        x = spec.sample(10_000, np.random.default_rng(0))
        assert np.all(np.minimum(abs(x - 0.2), abs(x - 0.8)) < 0.06)


class TestMode:
    def test_gaussian_interior(self):
        space = SearchSpace((Continuous("x2", 0.0, 15.0),))
        prior = FactorizedPrior(space, [spec_from_dict({"type": "gaussian", "mu": 2.275,
                                                        "sigma": 0.1}, space.parameters[0])])
        assert prior.mode()["x2"] == pytest.approx(2.275, abs=1e-12)

    def test_discrete_first_index_tie_break(self):
        space = SearchSpace((Ordinal("p1", (1, 2, 3, 4)),))
        prior = FactorizedPrior(space, [DiscreteWeights((0.1, 0.3, 0.3, 0.3))])
        assert prior.mode()["p1"] == 2

    def test_exponential_decreasing_boundary(self):
        assert _prior_1d(Exponential(10.0, "decreasing")).mode()["x"] == -5.0

    @pytest.mark.parametrize("spec", [
        Beta(2, 5), Beta(3, 3), GaussianTrunc(0.3, 0.05), Exponential(3.0, "increasing"),
        KDE((0.1, 0.15, 0.7), 0.05),
        Mixture((GaussianTrunc(0.2, 0.05), GaussianTrunc(0.8, 0.02)), (0.5, 0.5)),
    ])
    def test_mode_maximizes_grid(self, spec):
        prior = _prior_1d(spec)
        grid = np.linspace(0, 1, 10_001)
        m = prior.mode_unit()[0]
        assert spec.pdf(np.array([m]))[0] >= spec.pdf(grid).max() * (1 - 1e-6)


class TestSpecs:
    def test_weights_need_discrete(self):
        with pytest.raises(ValueError):
            FactorizedPrior(LINE, [DiscreteWeights((0.5, 0.5))])

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            DiscreteWeights((0.5, 0.2))

    def test_mixture_weights(self):
        with pytest.raises(ValueError):
            Mixture((Uniform(), Beta(3, 3)), (0.7, 0.7))

    def test_kde_bandwidth_positive(self):
        with pytest.raises(ValueError):
            KDE((0.5,), 0.0)

    def test_json_prior_schema(self):
        space = SearchSpace.from_dict({"parameters": [
            {"name": "x1", "type": "continuous", "range": [-5, 10],
             "prior": {"type": "gaussian", "mu": 3.14, "sigma": 0.15}},
            {"name": "x2", "type": "continuous", "range": [0, 15],
             "prior": {"type": "decay", "rate": 10}},
            {"name": "lp", "type": "ordinal", "values": [1, 2, 3, 4, 5],
             "prior": {"type": "weights", "probs": [0.4, 0.065, 0.07, 0.065, 0.4]}},
            {"name": "b", "type": "continuous", "range": [0, 1],
             "prior": {"type": "beta", "a": 3, "b": 3}},
        ]})
        raw = {"parameters": [
            {"name": "x1", "prior": {"type": "gaussian", "mu": 3.14, "sigma": 0.15}},
            {"name": "x2", "prior": {"type": "decay", "rate": 10}},
            {"name": "lp", "prior": {"type": "weights", "probs": [0.4, 0.065, 0.07, 0.065, 0.4]}},
            {"name": "b", "prior": {"type": "beta", "a": 3, "b": 3}},
        ]}
        prior = prior_from_space_dict(space, raw)
        mode = prior.mode()
        assert mode["x1"] == pytest.approx(3.14)
        assert mode["x2"] == 0.0
        assert mode["lp"] == 1
        assert mode["b"] == pytest.approx(0.5)

    def test_kde_centers_file(self, tmp_path):
        (tmp_path / "c.json").write_text("[1.0, 2.0, 3.0]")
        p = Continuous("x", 0.0, 10.0)
        spec = spec_from_dict({"type": "kde", "centers_file": "c.json", "a": 1, "b": 4}, p,
                              tmp_path)
        np.testing.assert_allclose(spec.centers, [0.1, 0.2, 0.3])
        expected = np.std([0.1, 0.2, 0.3], ddof=1) * 3 ** (-1 / 5)
        assert spec.bandwidth == pytest.approx(math.hypot(expected, 1e-4))

    def test_unknown_type(self):
        with pytest.raises(ValueError):
            spec_from_dict({"type": "cauchy"}, Continuous("x", 0, 1))


class TestConstructors:
    def test_synthetic_degenerate_sigma(self):
        prior = build_synthetic_prior(BRANIN, (math.pi, 2.275), 1e-9, np.random.default_rng(0))
        np.testing.assert_allclose(list(prior.mode().values()), [math.pi, 2.275], atol=1e-6)

    def test_synthetic_strong_mode_close(self):
        opt = BRANIN.normalize((math.pi, 2.275))
        for seed in range(20):
            prior = build_synthetic_prior(BRANIN, (math.pi, 2.275), 0.01,
                                          np.random.default_rng(seed))
            assert np.all(np.abs(prior.mode_unit() - opt) < 0.04)

    def test_synthetic_fresh_centre_per_seed(self):
        a = build_synthetic_prior(BRANIN, (math.pi, 2.275), 0.01, np.random.default_rng(0))
        b = build_synthetic_prior(BRANIN, (math.pi, 2.275), 0.01, np.random.default_rng(1))
        assert not np.allclose(a.mode_unit(), b.mode_unit())

    def test_misleading_monotone(self):
        space = SearchSpace((Continuous("x", 0.0, 1.0),))
        prior = build_misleading_prior(space, lambda X: X[:, 0], np.random.default_rng(0),
                                       n_samples=1000)
        assert prior.mode()["x"] > 0.99

    def test_misleading_needs_samples(self):
        with pytest.raises(ValueError):
            build_misleading_prior(BRANIN, branin_batch, np.random.default_rng(0), n_samples=0)

    def test_misleading_branin_centre_is_bad(self):
        prior = build_misleading_prior(BRANIN, branin_batch, np.random.default_rng(0),
                                       n_samples=100_000)
        x = prior.mode()
        assert branin_batch([[x["x1"], x["x2"]]])[0] > 100

    def test_kde_single_point(self):
        rng = np.random.default_rng(0)
        pool = (rng.random((50, 2)), rng.random(50))
        best = pool[0][np.argmin(pool[1])]
        for mv in (False, True):
            prior = build_kde_prior(BRANIN, branin_batch, 50, 1, mv, rng, pool=pool)
            np.testing.assert_allclose(prior.mode_unit(), best, atol=1e-3)

    def test_kde_topk_validation(self):
        with pytest.raises(ValueError):
            build_kde_prior(BRANIN, branin_batch, 10, 11, False, np.random.default_rng(0))

    def test_bandwidth_rule(self):
        assert kde_bandwidth_factor(20, 1, a=1, b=4) == pytest.approx(20 ** (-1 / 5))
        assert kde_bandwidth_factor(20, 1) == pytest.approx(20 ** -1 / 100)
        assert kde_bandwidth_factor(20, 2) < kde_bandwidth_factor(20, 2, a=1, b=4)

    def test_joint_kde_peaks_on_cluster(self):
        pts = np.array([[0.5, 0.5], [0.52, 0.5], [0.5, 0.52], [0.9, 0.1]])
        prior = JointKdePrior(BRANIN, pts, a=1, b=4)
        g = prior.density_good(np.array([[0.51, 0.51], [0.1, 0.9]]))
        assert g[0] > 0.5 and g[1] < 0.05

    def test_strong_kde_beats_weak_at_optimum(self):
        bench = get_benchmark("branin")
        opt = BRANIN.normalize((math.pi, 2.275))
        wins = 0
        for seed in range(5):
            rng = np.random.default_rng(seed)
            strong = build_kde_prior(BRANIN, bench.batch, 100_000 * 2, 20, False, rng)
            weak = build_kde_prior(BRANIN, bench.batch, 1_000 * 2, 20, False, rng)
            wins += strong.raw_density(opt)[0] > weak.raw_density(opt)[0]
        assert wins >= 3


unit = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def shapes(draw):
    kind = draw(st.sampled_from(["gauss", "beta", "exp", "kde"]))
    if kind == "gauss":
        return GaussianTrunc(draw(st.floats(-0.5, 1.5)), draw(st.floats(0.005, 2.0)))
    if kind == "beta":
        return Beta(draw(st.floats(0.5, 10)), draw(st.floats(0.5, 10)))
    if kind == "exp":
        return Exponential(draw(st.floats(0.1, 30)), draw(st.sampled_from(["increasing",
                                                                          "decreasing"])))
    centers = draw(st.lists(unit, min_size=1, max_size=5))
    return KDE(tuple(centers), draw(st.floats(0.01, 0.5)))


@given(a=shapes(), b=shapes(), u=st.lists(st.tuples(unit, unit), min_size=1, max_size=20))
def test_scaled_densities_in_range_and_complementary(a, b, u):
    prior = FactorizedPrior(BRANIN, [a, b])
    U = np.array(u)
    g, bad = prior.density_good(U), prior.density_bad(U)
    assert np.all((g >= EPS) & (g <= 1)) and np.all((bad >= EPS) & (bad <= 1))
    np.testing.assert_allclose(g + bad, 1.0, atol=2e-12)


@given(w=st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
def test_discrete_bad_sums_to_one(w):
    w = np.array(w) / np.sum(w)
    space = SearchSpace((Ordinal("o", tuple(range(len(w)))),))
    prior = FactorizedPrior(space, [DiscreteWeights(tuple(w))])
    U = np.linspace(0, 1, len(w))[:, None]
    assert prior.density_bad(U).sum() == pytest.approx(1.0, abs=1e-9)
