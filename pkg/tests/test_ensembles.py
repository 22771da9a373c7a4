import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intrapath.ensembles import (
    FundamentalScenario,
    ScenarioEnsemble,
    SvsRanking,
    build_fundamental_scenarios,
    empirical_median_path,
    fundamental_ensemble,
    historical_ensemble,
    naive_ensemble,
    rank_order,
    select_scenarios_svs,
    svs_stop_count,
    svs_weights,
    wasserstein1,
)
from intrapath.features import scenario_steps
from intrapath.market_data import DataError, FundamentalSeries
from intrapath.path_forecast import ForecastConfig, TrainingRows, fit_multi_output
from intrapath.svr import KernelParams, SvrModel

from .oracles import wasserstein_lp


def uniform(paths, kind="historical"):
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    n = paths.shape[0]
    return ScenarioEnsemble(None, paths, np.full(n, 1.0 / n), tuple(range(n)), kind)


def duals(alpha, alpha_star):
    a, s = np.asarray(alpha, float), np.asarray(alpha_star, float)
    return SvrModel(a, s, 0.0, np.flatnonzero(s - a), np.zeros((0, 0)), np.zeros((0, 0)), KernelParams(1, 1))


class TestEnsembleType:
    def test_validation(self):
        with pytest.raises(ValueError):
            ScenarioEnsemble(None, np.zeros((2, 3)), np.array([0.7, 0.7]), (0, 1), "historical")
        with pytest.raises(ValueError):
            ScenarioEnsemble(None, np.zeros((2, 3)), np.array([0.5, 0.5]), (0,), "historical")
        with pytest.raises(ValueError):
            ScenarioEnsemble(None, np.zeros((2, 3)), np.array([0.5, 0.5]), (0, 1), "other")

    def test_subset_is_uniform(self):
        e = uniform(np.arange(12.0).reshape(4, 3))
        s = e.subset([3, 1])
        assert s.size == 2 and np.allclose(s.weights, 0.5)
        assert s.provenance == (3, 1)


class TestHistorical:
    def test_zero_residuals(self):
        e = historical_ensemble(np.array([1.0, 2.0]), np.zeros((3, 2)))
        assert np.all(e.paths == [1.0, 2.0])

    def test_single_residual(self):
        e = historical_ensemble(np.array([1.0, 2.0]), np.array([[0.5, -1.0]]))
        assert e.paths.tolist() == [[1.5, 1.0]]

    def test_mean_linearity(self, rng):
        f = rng.normal(size=5)
        r = rng.normal(size=(7, 5))
        e = historical_ensemble(f, r)
        assert np.allclose(e.paths.mean(axis=0), f + r.mean(axis=0))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            historical_ensemble(np.zeros(3), np.zeros((2, 4)))


class TestFundamental:
    def _series(self, actual_shift=0.0):
        times = np.arange(0, 15 * 400, 15)
        fc = np.sin(times / 500.0)
        return FundamentalSeries("load", 15, times, fc + actual_shift, fc, 76)

    def test_perfect_forecasts(self):
        scen = build_fundamental_scenarios(self._series(), [1000, 2000], 3000, 31, 76)
        assert len(scen) == 2 and all(np.all(s.delta_fs == 0) for s in scen)

    def test_origin_order_enforced(self):
        with pytest.raises(ValueError):
            build_fundamental_scenarios(self._series(), [3000], 3000, 31, 76)

    def test_coverage_gap(self):
        with pytest.raises(DataError):
            build_fundamental_scenarios(self._series(), [15 * 395], 10**6, 31, 76)

    def test_sign_split_property(self):
        s = FundamentalScenario("load", 2.0, np.array([-1.0]), np.array([3.0]))
        assert s.sign_split.tolist() == [3.0, 0.0]

    def _model(self, rng):
        n, d = 15, 4
        X = rng.normal(size=(n, d))
        Y = np.cumsum(X[:, :1] + 0.1 * rng.normal(size=(n, 3)), axis=1)
        return fit_multi_output(TrainingRows(tuple(range(n)), X, 50 + rng.normal(size=n), Y), ForecastConfig(horizon=3))

    def test_zero_and_identical_scenarios(self, rng):
        pm = self._model(rng)
        base = rng.normal(size=4)
        base[2:] = 0.0
        zero = FundamentalScenario("load", 0.0, np.zeros(1), np.zeros(1))
        e = fundamental_ensemble(pm, base, 50.0, 50.0, {"load": [zero, zero]}, {"load": slice(2, 4)})
        point = pm.predict_paths(base[None, :], [50.0], [50.0])[0]
        assert np.array_equal(e.paths[0], point) and np.array_equal(e.paths[0], e.paths[1])

    def test_missing_channel_mapping(self, rng):
        pm = self._model(rng)
        zero = FundamentalScenario("load", 0.0, np.zeros(1), np.zeros(1))
        with pytest.raises(KeyError, match="channel mapping missing"):
            fundamental_ensemble(pm, np.zeros(4), 50.0, 50.0, {"wind": [zero]}, {"load": slice(2, 4)})

    def test_scenarios_cover_horizon(self):
        scen = build_fundamental_scenarios(self._series(0.5), [1000], 3000, 31, 76)
        assert scen[0].delta_fs.size == scenario_steps(31, 15)


class TestNaive:
    def test_zero_increments(self):
        e = naive_ensemble(np.zeros((4, 5)), 30.0, 1000, np.random.default_rng(1))
        assert e.size == 1000 and np.all(e.paths == 30.0)

    def test_single_history(self):
        e = naive_ensemble(np.array([[1.0, -2.0, 0.5]]), 10.0, 50, np.random.default_rng(1))
        assert np.all(e.paths == [11.0, 9.0, 9.5])

    def test_unit_increments(self):
        e = naive_ensemble(np.ones((1, 6)), 10.0, 3, np.random.default_rng(1))
        assert e.paths[0].tolist() == [11, 12, 13, 14, 15, 16]

    def test_reproducible(self):
        inc = np.random.default_rng(0).normal(size=(9, 4))
        a = naive_ensemble(inc, 1.0, 100, np.random.default_rng(5))
        b = naive_ensemble(inc, 1.0, 100, np.random.default_rng(5))
        assert np.array_equal(a.paths, b.paths) and a.provenance == b.provenance

    def test_empty(self):
        with pytest.raises(ValueError):
            naive_ensemble(np.zeros((0, 3)), 1.0)


class TestWasserstein:
    def test_examples(self):
        assert wasserstein1([0.0, 1.0], [0.0, 1.0]) == 0.0
        assert wasserstein1([0.0], [1.0]) == 1.0
        assert wasserstein1([0.0, 1.0], [1.0, 2.0]) == pytest.approx(1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_lp(self, seed):
        rng = np.random.default_rng(seed)
        na, nb = rng.integers(1, 8, size=2)
        xa, xb = rng.normal(size=na), rng.normal(size=nb)
        wa, wb = rng.dirichlet(np.ones(na)), rng.dirichlet(np.ones(nb))
        assert wasserstein1(xa, xb, wa, wb) == pytest.approx(wasserstein_lp(xa, wa, xb, wb), abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        x, y, z = (rng.normal(size=rng.integers(1, 8)) for _ in range(3))
        assert wasserstein1(x, x) == 0.0
        assert wasserstein1(x, y) == pytest.approx(wasserstein1(y, x), abs=1e-12)
        assert wasserstein1(x, z) <= wasserstein1(x, y) + wasserstein1(y, z) + 1e-12

    def test_empty(self):
        with pytest.raises(ValueError):
            wasserstein1([], [1.0])


class TestSvs:
    def test_zero_duals(self):
        r = svs_weights([duals([0, 0], [0, 0])], [0, 1])
        assert np.all(r.scenario_weights == 0)

    def test_two_steps(self):
        r = svs_weights([duals([0.0, 0.3], [0.3, 0.0]), duals([0.2, 0.0], [0.0, 0.2])], [0, 1])
        assert r.scenario_weights[0] == pytest.approx(0.5)
        assert r.scenario_weights.sum() == pytest.approx(1.0)

    def test_index_checks(self):
        with pytest.raises(IndexError):
            svs_weights([duals([0, 0], [0, 0])], [2])
        with pytest.raises(ValueError):
            svs_weights([duals([0, 0], [0, 0]), duals([0], [0])], [0])

    def test_rank_ties_keep_index_order(self):
        assert rank_order([1.0, 3.0, 1.0, 3.0]).tolist() == [1, 3, 0, 2]

    def test_identical_scenarios_stop_at_minimum(self):
        paths = np.ones((40, 5))
        assert svs_stop_count(paths, np.arange(40), 0.01, 10, 10) == 10

    def test_omega_extremes(self, rng):
        paths = rng.normal(size=(60, 5))
        order = np.arange(60)
        assert svs_stop_count(paths, order, np.inf, 10, 10) == 10
        assert svs_stop_count(paths, order, 0.0, 10, 10) == 60

    def test_per_step_distance_variant(self, rng):
        paths = rng.normal(size=(30, 4))
        assert svs_stop_count(paths, np.arange(30), np.inf, 5, 7, pooled=False) == 7

    def test_select_prefix(self, rng):
        e = uniform(rng.normal(size=(30, 4)))
        ranking = SvsRanking(rng.random(30), rank_order(rng.random(30)))
        reduced, info = select_scenarios_svs(ranking, e, omega=np.inf, ma_window=3, minimum=5)
        assert reduced.size == 5 == info.selected_count
        assert np.array_equal(reduced.paths, e.paths[ranking.order[:5]])
        assert np.allclose(reduced.weights, 0.2)

    def test_small_ensemble_flagged(self, rng):
        e = uniform(rng.normal(size=(4, 3)))
        reduced, info = select_scenarios_svs(SvsRanking(np.ones(4), np.arange(4)), e, minimum=10)
        assert reduced.flagged and reduced.size == 4 and info.selected_count == 4

    def test_ranking_size_mismatch(self, rng):
        e = uniform(rng.normal(size=(12, 3)))
        with pytest.raises(ValueError):
            select_scenarios_svs(SvsRanking(np.ones(5), np.arange(5)), e, minimum=3)


class TestMedian:
    def test_examples(self):
        assert empirical_median_path(uniform([[3.0, 4.0]])).tolist() == [3.0, 4.0]
        assert empirical_median_path(uniform([[0.0], [10.0]])).tolist() == [0.0]
        e = ScenarioEnsemble(None, np.array([[0.0], [10.0]]), np.array([0.9, 0.1]), (0, 1), "historical")
        assert empirical_median_path(e).tolist() == [0.0]
