import dataclasses
import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from intrapath.features import (
    ChannelSpec,
    FeatureSpec,
    MarketData,
    Standardizer,
    SupplyCurve,
    assemble_features,
    default_feature_spec,
    destandardize,
    difference_path,
    forecast_origin,
    merit_order_slope,
    realized_scenario_delta,
    scenario_period_starts,
    scenario_steps,
    sign_split,
    standardize,
    step_to_period,
    target_path,
    transformed_supply,
)
from intrapath.market_data import DataError, FundamentalSeries, VwapGrid, availability_floor, grid_origin_minute

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestTransforms:
    def test_difference_path(self):
        assert difference_path([10, 12, 15], 0).tolist() == [0, 2, 5]
        assert difference_path([4, 4, 4], 1).tolist() == [0, 0, 0]
        assert difference_path([1, 7, 3], 1)[1] == 0

    def test_difference_origin_bounds(self):
        with pytest.raises(IndexError):
            difference_path([1, 2], 2)

    def test_standardize_examples(self):
        z, mean, std = standardize([1, 1, 1])
        assert z.tolist() == [0, 0, 0] and mean == 1 and std == 1
        z, mean, std = standardize([0, 2])
        assert mean == 1 and z.tolist() == [-1, 1]

    @given(st.lists(finite, min_size=1, max_size=40))
    def test_standardize_round_trip(self, xs):
        z, mean, std = standardize(xs)
        assert np.allclose(destandardize(z, mean, std), xs, atol=1e-12 * max(1.0, max(abs(x) for x in xs)))

    def test_standardizer_zero_variance_column(self):
        s = Standardizer.fit([[1.0, 5.0], [3.0, 5.0]])
        assert s.std.tolist() == [1.0, 1.0]
        assert np.allclose(s.apply([[2.0, 5.0]]), [[0.0, 0.0]])
        assert np.allclose(s.invert(s.apply([[7.0, 1.0]])), [[7.0, 1.0]])

    def test_sign_split(self):
        assert sign_split([3.0]).tolist() == [3.0, 0.0]
        assert sign_split([-4.0]).tolist() == [0.0, -4.0]

    @given(st.lists(finite, min_size=1, max_size=20))
    def test_sign_split_recombines(self, xs):
        s = sign_split(xs)
        n = len(xs)
        assert np.array_equal(s[:n] + s[n:], np.asarray(xs, dtype=float))
        assert np.all(s[:n] >= 0) and np.all(s[n:] <= 0)


class TestScenarioGeometry:
    @pytest.mark.parametrize("phase", range(0, 60, 5))
    def test_steps_cover_every_phase(self, phase):
        t0 = 1000 * 60 + phase
        idx = step_to_period(t0, 31, 15)
        assert idx.min() == 0 and idx.max() < scenario_steps(31, 15)
        starts = scenario_period_starts(t0, 31, 15)
        assert starts[0] <= t0 < starts[0] + 15

    def test_scenario_delta_arithmetic(self):
        times = np.arange(0, 15 * 200, 15)
        actual = np.full(times.size, 10.0)
        forecast = np.full(times.size, 10.0)
        known_at = availability_floor(900, 76, 15)
        actual[times == known_at] = 12.0  # known error +2
        future = scenario_period_starts(900, 31, 15)
        forecast[np.isin(times, future)] = 11.0  # future error -1
        s = FundamentalSeries("load", 15, times, actual, forecast, 76)
        delta = realized_scenario_delta(s, 900, 31, 76)
        assert np.allclose(delta, 3.0)

    def test_perfect_forecasts_give_zero_delta(self):
        times = np.arange(0, 15 * 200, 15)
        s = FundamentalSeries("wind", 15, times, np.ones(times.size), np.ones(times.size), 76)
        assert np.all(realized_scenario_delta(s, 900, 31, 76) == 0)


def _toy_data():
    day = dt.date(2021, 3, 1)  # a Monday
    prices = 50.0 + np.arange(95.0)
    volumes = np.ones(95)
    grid = VwapGrid(day, 1, grid_origin_minute(day), prices, volumes, 50.0)
    times = np.arange(grid.origin - 24 * 60, grid.origin + 24 * 60, 15)
    s = FundamentalSeries("load", 15, times, np.full(times.size, 100.0), np.full(times.size, 90.0), 76)
    return MarketData({(day, 1): grid}, {"load": s}), day


class TestAssembly:
    def test_last_price_only(self):
        data, day = _toy_data()
        spec = FeatureSpec((ChannelSpec("p", "last_price"),))
        o = forecast_origin(day, 1)
        assert assemble_features(spec, data, o).values.tolist() == [50.0 + o.m]
        s = Standardizer(np.array([40.0]), np.array([2.0]))
        assert assemble_features(spec, data, o, s).values.tolist() == [(50.0 + o.m - 40.0) / 2.0]

    def test_weekday_monday(self):
        data, day = _toy_data()
        spec = FeatureSpec((ChannelSpec("d", "weekday"),))
        v = assemble_features(spec, data, forecast_origin(day, 1)).values
        assert v.tolist() == [1, 0, 0, 0, 0, 0, 0]

    def test_forecast_error_channel(self):
        data, day = _toy_data()
        spec = FeatureSpec((ChannelSpec("e", "exogenous_forecast_error", "load", 76, 15),))
        assert assemble_features(spec, data, forecast_origin(day, 1)).values.tolist() == [10.0]

    def test_lags_and_volume(self):
        data, day = _toy_data()
        spec = FeatureSpec((ChannelSpec("d", "price_diff_lags"), ChannelSpec("v", "rolling_volume_sum")), lags=(1, 3))
        v = assemble_features(spec, data, forecast_origin(day, 1)).values
        assert v.tolist() == [1.0, 3.0, 12.0]

    def test_forecast_role_zeroes_scenarios(self, small_market):
        spec = default_feature_spec()
        day = small_market.days[-1]
        o = forecast_origin(day, 2)
        lay = spec.layout()
        fv = assemble_features(spec, small_market, o, role="forecast").values
        tv = assemble_features(spec, small_market, o, role="train").values
        for c in spec.scenario_channels():
            assert np.all(fv[lay[c.name]] == 0)
        assert np.any(tv[lay["load_scenario"]] != 0)
        base = spec.without("scenario_delta")
        assert np.array_equal(fv[: base.dimension], tv[: base.dimension])

    def test_no_lookahead(self, small_market):
        """Prices after the origin never enter the feature vector."""
        spec = default_feature_spec(scenarios=False)
        key = (small_market.days[-1], 2)
        o = forecast_origin(*key, 185)
        g = small_market.grids[key]
        prices = g.prices.copy()
        prices[o.m + 1 :] += 1000.0
        altered = dict(small_market.grids)
        altered[key] = VwapGrid(g.delivery_day, g.delivery_quarter, g.origin, prices, g.volumes, g.auction_seed_price)
        other = dataclasses.replace(small_market, grids=altered)
        a = assemble_features(spec, small_market, o).values
        b = assemble_features(spec, other, o).values
        assert np.array_equal(a, b)
        assert not np.array_equal(target_path(small_market, o, 31), target_path(other, o, 31))

    def test_unknown_series(self, small_market):
        spec = FeatureSpec((ChannelSpec("x", "exogenous_level", "nuclear"),))
        with pytest.raises(DataError):
            spec.validate(small_market)

    def test_channel_validation(self):
        with pytest.raises(ValueError):
            ChannelSpec("x", "bogus")
        with pytest.raises(ValueError):
            ChannelSpec("x", "exogenous_level")
        with pytest.raises(ValueError):
            FeatureSpec((ChannelSpec("a", "weekday"), ChannelSpec("a", "last_price")))

    def test_layout_dimension(self):
        spec = default_feature_spec()
        lay = spec.layout()
        assert max(s.stop for s in lay.values()) == spec.dimension
        assert lay["load_scenario"].stop - lay["load_scenario"].start == 2 * scenario_steps(31, 15)


class TestMeritOrder:
    def test_linear_curve(self):
        bids = tuple((v / 100.0, 10.0, "sell") for v in range(10, 100001, 10))
        slopes = merit_order_slope(SupplyCurve(bids), 0.0, 500.0)
        assert np.allclose(slopes, 0.01, atol=1e-9)

    def test_flat_curve(self):
        curve = SupplyCurve(((20.0, 10000.0, "sell"),))
        assert merit_order_slope(curve, 2000.0, 20.0) == [0.0, 0.0, 0.0]

    def test_step_inside_narrow_window(self):
        curve = SupplyCurve(((10.0, 5000.0, "sell"), (20.0, 5000.0, "sell")))
        s500, s1000, s2000 = merit_order_slope(curve, 0.0, 15.0)
        assert s500 == pytest.approx(0.01)
        assert s2000 == pytest.approx(s500 * 500.0 / 2000.0)
        assert s500 > s1000 > s2000 > 0

    def test_buy_bids_become_supply(self):
        curve = SupplyCurve(((10.0, 100.0, "sell"), (5.0, 50.0, "buy")))
        prices, vols = transformed_supply(curve, 20.0)
        assert np.all(np.diff(vols) >= 0)
        assert vols[-1] == 100.0 + 50.0 - 20.0

    def test_bid_validation(self):
        with pytest.raises(ValueError):
            SupplyCurve(((10.0, 0.0, "sell"),))
        with pytest.raises(ValueError):
            SupplyCurve(((5000.0, 1.0, "sell"),))
