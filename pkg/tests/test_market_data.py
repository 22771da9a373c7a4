import dataclasses
import datetime as dt

import numpy as np
import pytest

from intrapath.market_data import (
    DataError,
    SyntheticMarketConfig,
    TransactionRecord,
    aggregate_all,
    aggregate_vwap,
    availability_floor,
    from_epoch_minute,
    generate_synthetic_market,
    grid_origin_minute,
    grids_to_auctions,
    grids_to_transactions,
    load_csv,
    n_intervals,
    origin_index,
    series_from_rows,
    series_to_rows,
    write_csv,
    SCHEMAS,
)

DAY = dt.date(2021, 3, 2)


def trade(u, price, volume, k=0, quarter=1):
    ts = from_epoch_minute(grid_origin_minute(DAY) + 5 * u + 1 + 0.1 * k)
    return TransactionRecord(f"t{u}-{k}", ts, DAY, quarter, price, volume)


class TestTimeGrid:
    def test_interval_counts(self):
        assert n_intervals(1) == 95
        assert n_intervals(2) == 98
        assert n_intervals(96) == 95 + 3 * 95

    def test_origin_index(self):
        assert origin_index(1) == 58
        assert origin_index(96) == 58 + 3 * 95
        assert n_intervals(1) - origin_index(1) - 1 >= 31

    def test_origin_off_grid_rejected(self):
        with pytest.raises(DataError):
            origin_index(1, lead_minutes=183)

    @pytest.mark.parametrize("m,shift,g,expected", [(240, 181, 60, 0), (241, 181, 60, 60), (91, 76, 15, 15)])
    def test_availability_floor(self, m, shift, g, expected):
        assert availability_floor(m, shift, g) == expected

    def test_availability_before_shift(self):
        with pytest.raises(DataError):
            availability_floor(10, 20, 15)


class TestAggregation:
    def test_weighted_mean(self):
        grid = aggregate_vwap([trade(3, 10.0, 1.0, 0), trade(3, 20.0, 3.0, 1)], (DAY, 1), auction_price=30.0)
        assert grid.prices[3] == pytest.approx(17.5, abs=1e-12)
        assert grid.volumes[3] == 4.0

    def test_carry_forward_and_auction_seed(self):
        grid = aggregate_vwap([trade(5, 42.0, 1.0)], (DAY, 1), auction_price=30.0)
        assert np.all(grid.prices[:5] == 30.0)
        assert np.all(grid.prices[5:] == 42.0)
        assert grid.prices.size == n_intervals(1)

    def test_no_price_basis(self):
        with pytest.raises(DataError):
            aggregate_vwap([trade(5, 42.0, 1.0)], (DAY, 1))
        with pytest.raises(DataError):
            aggregate_vwap([], (DAY, 1))

    def test_trade_outside_grid(self):
        late = trade(n_intervals(1) + 2, 1.0, 1.0)
        with pytest.raises(DataError, match="outside grid span"):
            aggregate_vwap([late], (DAY, 1), 10.0)

    def test_foreign_delivery(self):
        with pytest.raises(DataError, match="another delivery"):
            aggregate_vwap([trade(1, 1.0, 1.0, quarter=2)], (DAY, 1), 10.0)

    def test_nonpositive_volume_rejected(self):
        with pytest.raises(DataError):
            trade(1, 1.0, 0.0)

    def test_grids_round_trip_exactly(self, small_market):
        grids = small_market.grids
        back = aggregate_all(grids_to_transactions(grids), grids_to_auctions(grids))
        assert back.keys() == grids.keys()
        assert all(back[k] == grids[k] for k in grids)


class TestSynthetic:
    def test_deterministic(self):
        cfg = SyntheticMarketConfig(n_days=2, deliveries_per_day=2, rng_seed=3)
        g1, s1 = generate_synthetic_market(cfg)
        g2, s2 = generate_synthetic_market(cfg)
        assert all(g1[k] == g2[k] for k in g1)
        assert all(s1[k] == s2[k] for k in s1)

    def test_seed_changes_output(self):
        a, _ = generate_synthetic_market(SyntheticMarketConfig(n_days=1, deliveries_per_day=1, rng_seed=1))
        b, _ = generate_synthetic_market(SyntheticMarketConfig(n_days=1, deliveries_per_day=1, rng_seed=2))
        k = next(iter(a))
        assert not np.array_equal(a[k].prices, b[k].prices)

    def test_degenerate_dynamics(self):
        cfg = SyntheticMarketConfig(n_days=2, deliveries_per_day=3, volatility=0.0, fundamental_effect=0.0, base_price=47.0)
        grids, _ = generate_synthetic_market(cfg)
        assert all(np.all(g.prices == 47.0) for g in grids.values())

    def test_injected_error_shifts_price(self):
        cfg = SyntheticMarketConfig(
            n_days=1, deliveries_per_day=1, volatility=0.0, fundamental_effect=1.0, activity=1.0, fundamentals=(("load", 1.0),)
        )
        _, series = generate_synthetic_market(cfg)
        times = series["load"].times
        zero = np.zeros(times.size)
        bumped = zero.copy()
        grid0, _ = generate_synthetic_market(cfg, {"load": zero})
        key = next(iter(grid0))
        g = grid0[key]
        u = 40
        start = g.origin + 5 * u
        k = (start - times[0]) // 15
        bumped[k] = 5.0
        grid1, _ = generate_synthetic_market(cfg, {"load": bumped})
        diff = grid1[key].prices - g.prices
        assert diff[u] == pytest.approx(5.0, abs=1e-12)
        hit = (g.origin + 5 * np.arange(g.prices.size) - times[0]) // 15 == k
        assert np.allclose(diff[~hit], 0.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SyntheticMarketConfig(volatility=-1.0)
        with pytest.raises(ValueError):
            SyntheticMarketConfig(deliveries_per_day=97)


class TestCsv:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text(",".join(SCHEMAS["transactions"]) + "\n")
        assert load_csv(p, "transactions") == []

    def test_negative_volume_names_line(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text(
            ",".join(SCHEMAS["transactions"]) + "\n"
            "a,2021-03-01T15:01:00Z,2021-03-02,1,10.0,1.0,DE\n"
            "b,2021-03-01T15:06:00Z,2021-03-02,1,10.0,-1,DE\n"
        )
        with pytest.raises(DataError, match=r"t\.csv:3"):
            load_csv(p, "transactions")

    def test_missing_column(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("trade_id,price_eur_mwh\n")
        with pytest.raises(DataError, match="missing column"):
            load_csv(p, "transactions")

    def test_round_trip(self, small_market, tmp_path):
        trades = grids_to_transactions(small_market.grids)
        write_csv(tmp_path / "t.csv", trades, "transactions")
        assert load_csv(tmp_path / "t.csv", "transactions") == trades
        rows = series_to_rows(small_market.series)
        write_csv(tmp_path / "f.csv", rows, "fundamentals")
        back = series_from_rows(load_csv(tmp_path / "f.csv", "fundamentals"))
        assert all(back[n] == small_market.series[n] for n in small_market.series)
        auctions = grids_to_auctions(small_market.grids)
        write_csv(tmp_path / "a.csv", auctions, "auction_prices")
        assert load_csv(tmp_path / "a.csv", "auction_prices") == auctions

    def test_mixed_granularity_rejected(self, small_market):
        rows = series_to_rows({"load": small_market.series["load"]})
        rows[0] = dataclasses.replace(rows[0], granularity=60)
        with pytest.raises(DataError, match="mixed granularity"):
            series_from_rows(rows)
