"""Tick ingestion, 5-minute VWAP grids, fundamental series and a synthetic market.

Times inside the package are integer minutes since 1970-01-01 UTC ("epoch
minutes").  Delivery days and quarters refer to market local time, which is UTC
shifted by a fixed ``utc_offset`` (CET, 60 minutes, by default).
"""

import csv
import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .seeding import stream

INTERVAL_MIN = 5
GRID_OPEN_HOUR = 16  # continuous trading opens 16:00 on the day before delivery
GATE_CLOSURE_MIN = 5
QUARTERS_PER_DAY = 96
DEFAULT_UTC_OFFSET = 60
FORECAST_LEAD_MIN = 185

_EPOCH = dt.date(1970, 1, 1)


class DataError(ValueError):
    """Invalid market input (bad record, empty price basis, grid violation)."""


# ---------------------------------------------------------------------------
# time helpers


def day_minute(day):
    """Epoch minute of 00:00 UTC on ``day``."""
    return (day - _EPOCH).days * 1440


def to_epoch_minute(ts):
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=dt.timezone.utc)
    return (ts - dt.datetime(1970, 1, 1, tzinfo=dt.timezone.utc)).total_seconds() / 60.0


def from_epoch_minute(minute):
    return dt.datetime(1970, 1, 1, tzinfo=dt.timezone.utc) + dt.timedelta(minutes=minute)


def grid_origin_minute(day, utc_offset=DEFAULT_UTC_OFFSET):
    """Epoch minute at which trading opens for products delivered on ``day``."""
    return day_minute(day - dt.timedelta(days=1)) + GRID_OPEN_HOUR * 60 - utc_offset


def delivery_start_minute(day, quarter, utc_offset=DEFAULT_UTC_OFFSET):
    return day_minute(day) + 15 * (quarter - 1) - utc_offset


def n_intervals(quarter):
    """Number of 5-minute intervals from grid open to gate closure."""
    minutes = (24 - GRID_OPEN_HOUR) * 60 + 15 * (quarter - 1) - GATE_CLOSURE_MIN
    return minutes // INTERVAL_MIN


def origin_index(quarter, lead_minutes=FORECAST_LEAD_MIN):
    """Index of the interval that ends ``lead_minutes`` before delivery start."""
    minutes = (24 - GRID_OPEN_HOUR) * 60 + 15 * (quarter - 1) - lead_minutes
    if minutes % INTERVAL_MIN or minutes <= 0:
        raise DataError(f"lead of {lead_minutes} min does not fall on the grid")
    return minutes // INTERVAL_MIN - 1


def availability_floor(m, shift, granularity):
    """Latest period start usable at minute ``m``: ``g * floor((m - shift) / g)``."""
    if granularity <= 0:
        raise ValueError("granularity must be positive")
    if m < shift:
        raise DataError(f"variable not yet available at minute {m} (shift {shift})")
    return granularity * ((m - shift) // granularity)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class TransactionRecord:
    trade_id: str
    timestamp: dt.datetime
    delivery_day: dt.date
    delivery_quarter: int
    price: float
    volume: float
    market_id: str = "DE"

    def __post_init__(self):
        if not self.volume > 0:
            raise DataError(f"trade {self.trade_id}: volume must be positive, got {self.volume}")
        if not 1 <= self.delivery_quarter <= QUARTERS_PER_DAY:
            raise DataError(f"trade {self.trade_id}: delivery quarter {self.delivery_quarter} outside 1..96")


@dataclass(frozen=True)
class AuctionPrice:
    delivery_day: dt.date
    delivery_quarter: int
    price: float


@dataclass(frozen=True)
class FundamentalRow:
    name: str
    timestamp: dt.datetime
    actual: float
    forecast: float
    granularity: int
    delay: int


@dataclass(frozen=True)
class CurveBid:
    delivery_day: dt.date
    delivery_quarter: int
    side: str
    price: float
    volume: float


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VwapGrid:
    """Regular 5-minute price/volume grid for one delivery product."""

    delivery_day: dt.date
    delivery_quarter: int
    origin: int
    prices: np.ndarray
    volumes: np.ndarray
    auction_seed_price: float

    def __post_init__(self):
        object.__setattr__(self, "prices", _frozen(self.prices))
        object.__setattr__(self, "volumes", _frozen(self.volumes))
        if self.prices.shape != self.volumes.shape:
            raise DataError("prices and volumes differ in length")
        if np.any(self.volumes < 0):
            raise DataError("negative interval volume")

    @property
    def key(self):
        return (self.delivery_day, self.delivery_quarter)

    def interval_end(self, u):
        """Epoch minute at which interval ``u`` closes (its price becomes known)."""
        return self.origin + INTERVAL_MIN * (u + 1)

    def __eq__(self, other):
        if not isinstance(other, VwapGrid):
            return NotImplemented
        return (
            self.key == other.key
            and self.origin == other.origin
            and self.auction_seed_price == other.auction_seed_price
            and np.array_equal(self.prices, other.prices)
            and np.array_equal(self.volumes, other.volumes)
        )


@dataclass(frozen=True, eq=False)
class FundamentalSeries:
    """Actuals and day-ahead forecasts of one fundamental on a regular time axis."""

    name: str
    granularity: int
    times: np.ndarray
    actuals: np.ndarray
    forecasts: np.ndarray
    availability_delay: int = 0

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times, np.int64))
        object.__setattr__(self, "actuals", _frozen(self.actuals))
        object.__setattr__(self, "forecasts", _frozen(self.forecasts))
        if not (self.times.shape == self.actuals.shape == self.forecasts.shape):
            raise DataError(f"series {self.name}: misaligned arrays")
        if self.availability_delay < 0:
            raise DataError(f"series {self.name}: negative availability delay")
        if self.times.size > 1 and np.any(np.diff(self.times) != self.granularity):
            raise DataError(f"series {self.name}: time axis not regular at {self.granularity} min")

    def _index(self, minute):
        k = (np.asarray(minute, dtype=np.int64) - self.times[0]) // self.granularity
        if np.any(k < 0) or np.any(k >= self.times.size):
            raise DataError(f"series {self.name}: no value at minute {minute}")
        return k

    def actual_at(self, minute):
        return self.actuals[self._index(minute)]

    def forecast_at(self, minute):
        return self.forecasts[self._index(minute)]

    def error_at(self, minute):
        k = self._index(minute)
        return self.actuals[k] - self.forecasts[k]

    def covers(self, start, stop):
        return self.times.size > 0 and self.times[0] <= start and stop < self.times[-1] + self.granularity

    def __eq__(self, other):
        if not isinstance(other, FundamentalSeries):
            return NotImplemented
        return (
            self.name == other.name
            and self.granularity == other.granularity
            and self.availability_delay == other.availability_delay
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.actuals, other.actuals)
            and np.array_equal(self.forecasts, other.forecasts)
        )


@dataclass(frozen=True)
class SyntheticMarketConfig:
    n_days: int = 60
    deliveries_per_day: int = QUARTERS_PER_DAY
    base_price: float = 50.0
    volatility: float = 1.0
    mean_reversion: float = 0.05
    fundamental_effect: float = 2.0
    rng_seed: int = 0
    start_day: dt.date = dt.date(2020, 1, 6)
    activity: float = 0.8
    profile_amplitude: float = 0.0
    error_persistence: float = 0.9
    utc_offset: int = DEFAULT_UTC_OFFSET
    fundamentals: tuple = (("load", 1.0), ("wind", -1.0), ("solar", -0.5))
    availability_delay: int = 76

    def __post_init__(self):
        if self.volatility < 0:
            raise ValueError("volatility must be >= 0")
        if not 0 <= self.mean_reversion <= 1:
            raise ValueError("mean_reversion must lie in [0, 1]")
        if not 0 < self.activity <= 1:
            raise ValueError("activity must lie in (0, 1]")
        if not 1 <= self.deliveries_per_day <= QUARTERS_PER_DAY:
            raise ValueError("deliveries_per_day must lie in 1..96")
        if self.n_days < 1:
            raise ValueError("n_days must be >= 1")


# ---------------------------------------------------------------------------
# aggregation


def aggregate_vwap(transactions, delivery, auction_price=None, utc_offset=DEFAULT_UTC_OFFSET):
    """Aggregate the trades of one delivery into its 5-minute VWAP grid.

    Empty intervals repeat the previous interval's price; intervals before the
    first trade take ``auction_price``.
    """
    day, quarter = delivery
    origin = grid_origin_minute(day, utc_offset)
    n = n_intervals(quarter)
    transactions = list(transactions)
    if auction_price is not None and not math.isfinite(auction_price):
        raise DataError("auction price must be finite")
    if not transactions and auction_price is None:
        raise DataError(f"no price basis for delivery {day} q{quarter}")

    slot = np.empty(len(transactions), dtype=np.int64)
    for k, tr in enumerate(transactions):
        if (tr.delivery_day, tr.delivery_quarter) != (day, quarter):
            raise DataError(f"transaction {k} ({tr.trade_id}) belongs to another delivery")
        u = int((to_epoch_minute(tr.timestamp) - origin) // INTERVAL_MIN)
        if not 0 <= u < n:
            raise DataError(f"transaction {k} ({tr.trade_id}) outside grid span (interval {u})")
        slot[k] = u
    p = np.array([tr.price for tr in transactions], dtype=float)
    v = np.array([tr.volume for tr in transactions], dtype=float)
    volume = np.zeros(n)
    np.add.at(volume, slot, v)
    # price times volume share keeps single-trade intervals exact
    vwap = np.zeros(n)
    np.add.at(vwap, slot, p * (v / volume[slot]) if slot.size else p)

    prices = np.empty(n)
    last = np.nan if auction_price is None else float(auction_price)
    for u in range(n):
        if volume[u] > 0:
            last = vwap[u]
        prices[u] = last
    if np.isnan(prices).any():
        first = int(np.argmax(~np.isnan(prices)))
        raise DataError(f"no price basis for intervals 0..{first - 1} of {day} q{quarter}")
    seed = float(auction_price) if auction_price is not None else float(prices[0])
    return VwapGrid(day, quarter, origin, prices, volume, seed)


def aggregate_all(transactions, auctions, utc_offset=DEFAULT_UTC_OFFSET):
    """Group trades by delivery and aggregate each one; returns grids keyed by delivery."""
    by_delivery = {}
    for tr in transactions:
        by_delivery.setdefault((tr.delivery_day, tr.delivery_quarter), []).append(tr)
    seeds = {(a.delivery_day, a.delivery_quarter): a.price for a in auctions}
    keys = sorted(set(by_delivery) | set(seeds))
    return {k: aggregate_vwap(by_delivery.get(k, ()), k, seeds.get(k), utc_offset) for k in keys}


# ---------------------------------------------------------------------------
# synthetic market


def _fundamental_errors(config, times):
    """AR(1) forecast errors per fundamental on the 15-minute axis."""
    phi = config.error_persistence
    errors = {}
    for name, _ in config.fundamentals:
        rng = stream(config.rng_seed, "fundamental-error", name)
        shocks = rng.standard_normal(times.size) * math.sqrt(1 - phi**2)
        errors[name] = lfilter([1.0], [1.0, -phi], shocks)
    return errors


def _fundamental_levels(name, times):
    hours = (times % 1440) / 60.0
    if name == "solar":
        return np.clip(8.0 * np.sin(np.pi * (hours - 6.0) / 12.0), 0.0, None)
    if name == "wind":
        return 12.0 + 3.0 * np.sin(2 * np.pi * times / (1440.0 * 3.3))
    return 55.0 + 10.0 * np.sin(np.pi * (hours - 4.0) / 12.0) ** 2


def generate_synthetic_market(config, error_override=None):
    """Synthesize VWAP grids and fundamental series for ``config``.

    Prices follow a mean-reverting walk around the auction price plus
    ``fundamental_effect`` times the signed sum of fundamental forecast
    errors at each interval.  ``error_override`` maps series name to a full
    error array replacing the simulated one (used to test the response).
    Returns ``(grids, series)`` with grids keyed by ``(day, quarter)``.
    """
    first = config.start_day
    g = 15
    t0 = grid_origin_minute(first, config.utc_offset) - 24 * 60
    t1 = day_minute(first + dt.timedelta(days=config.n_days)) + 24 * 60
    times = np.arange(t0 - t0 % g, t1, g, dtype=np.int64)
    errors = _fundamental_errors(config, times)
    if error_override:
        for name, values in error_override.items():
            errors[name] = np.asarray(values, dtype=float)

    series = {}
    combined = np.zeros(times.size)
    for name, sign in config.fundamentals:
        forecast = _fundamental_levels(name, times)
        series[name] = FundamentalSeries(
            name, g, times, forecast + errors[name], forecast, config.availability_delay
        )
        combined += sign * errors[name]

    def combined_at(minutes):
        return combined[(minutes - times[0]) // g]

    grids = {}
    kappa = config.mean_reversion
    for day_idx in range(config.n_days):
        day = first + dt.timedelta(days=day_idx)
        origin = grid_origin_minute(day, config.utc_offset)
        day_rng = stream(config.rng_seed, "prices", day.isoformat())
        for quarter in range(1, config.deliveries_per_day + 1):
            n = n_intervals(quarter)
            shocks = day_rng.standard_normal(n)
            trade_draw = day_rng.random(n)
            vol_draw = day_rng.exponential(1.0, n)
            start = delivery_start_minute(day, quarter, config.utc_offset)
            profile = config.profile_amplitude * math.sin(2 * math.pi * (quarter - 1) / 96.0)
            auction = config.base_price + profile + config.fundamental_effect * combined_at(start)
            walk = lfilter([1.0], [1.0, -(1.0 - kappa)], config.volatility * shocks)
            ends = origin + INTERVAL_MIN * (np.arange(n) + 1)
            latent = auction + walk + config.fundamental_effect * combined_at(ends - INTERVAL_MIN)

            traded = trade_draw < config.activity
            ramp = 1.0 + 4.0 * np.arange(n) / n
            volumes = np.where(traded, np.round(vol_draw * ramp, 1) + 0.1, 0.0)
            prices = np.empty(n)
            last = auction
            for u in range(n):
                if traded[u]:
                    last = latent[u]
                prices[u] = last
            grids[(day, quarter)] = VwapGrid(day, quarter, origin, prices, volumes, auction)
    return grids, series


def grids_to_transactions(grids, market_id="DE"):
    """One trade per traded interval; aggregating them reproduces each grid exactly."""
    out = []
    for (day, quarter), grid in sorted(grids.items()):
        for u in np.flatnonzero(grid.volumes > 0):
            ts = from_epoch_minute(grid.origin + INTERVAL_MIN * int(u) + 2.5)
            out.append(
                TransactionRecord(
                    f"{day:%Y%m%d}-{quarter:02d}-{int(u):03d}",
                    ts,
                    day,
                    quarter,
                    float(grid.prices[u]),
                    float(grid.volumes[u]),
                    market_id,
                )
            )
    return out


def grids_to_auctions(grids):
    return [AuctionPrice(d, q, g.auction_seed_price) for (d, q), g in sorted(grids.items())]


def series_to_rows(series):
    rows = []
    for s in series.values() if isinstance(series, dict) else series:
        for t, a, f in zip(s.times, s.actuals, s.forecasts):
            rows.append(
                FundamentalRow(s.name, from_epoch_minute(int(t)), float(a), float(f), s.granularity, s.availability_delay)
            )
    return rows


def series_from_rows(rows):
    grouped = {}
    for r in rows:
        grouped.setdefault(r.name, []).append(r)
    out = {}
    for name, items in grouped.items():
        items.sort(key=lambda r: r.timestamp)
        gran = {r.granularity for r in items}
        delay = {r.delay for r in items}
        if len(gran) != 1 or len(delay) != 1:
            raise DataError(f"series {name}: mixed granularity or delay")
        times = np.array([int(round(to_epoch_minute(r.timestamp))) for r in items], dtype=np.int64)
        out[name] = FundamentalSeries(
            name,
            gran.pop(),
            times,
            [r.actual for r in items],
            [r.forecast for r in items],
            delay.pop(),
        )
    return out


# ---------------------------------------------------------------------------
# CSV io

SCHEMAS = {
    "transactions": ["trade_id", "timestamp_utc", "delivery_day", "delivery_quarter", "price_eur_mwh", "volume_mwh", "market_id"],
    "fundamentals": ["name", "timestamp_utc", "actual", "forecast", "granularity_min", "delay_min"],
    "auction_prices": ["delivery_day", "delivery_quarter", "price_eur_mwh"],
    "curves": ["delivery_day", "delivery_quarter", "side", "price", "volume"],
}


def _fmt_ts(ts):
    return ts.astimezone(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _parse_ts(text):
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = dt.datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=dt.timezone.utc)
    return ts.astimezone(dt.timezone.utc)


def _parse_row(kind, row):
    if kind == "transactions":
        volume = float(row["volume_mwh"])
        if volume < 0:
            raise DataError(f"negative volume {volume}")
        return TransactionRecord(
            row["trade_id"],
            _parse_ts(row["timestamp_utc"]),
            dt.date.fromisoformat(row["delivery_day"]),
            int(row["delivery_quarter"]),
            float(row["price_eur_mwh"]),
            volume,
            row["market_id"],
        )
    if kind == "fundamentals":
        return FundamentalRow(
            row["name"],
            _parse_ts(row["timestamp_utc"]),
            float(row["actual"]),
            float(row["forecast"]),
            int(row["granularity_min"]),
            int(row["delay_min"]),
        )
    if kind == "auction_prices":
        return AuctionPrice(dt.date.fromisoformat(row["delivery_day"]), int(row["delivery_quarter"]), float(row["price_eur_mwh"]))
    if kind == "curves":
        side = row["side"].strip().lower()
        if side not in ("buy", "sell"):
            raise DataError(f"unknown side {side!r}")
        volume = float(row["volume"])
        if volume < 0:
            raise DataError(f"negative volume {volume}")
        return CurveBid(dt.date.fromisoformat(row["delivery_day"]), int(row["delivery_quarter"]), side, float(row["price"]), volume)
    raise ValueError(f"unknown schema {kind!r}")


def _num(x):
    return repr(float(x))


def _format_row(kind, rec):
    if kind == "transactions":
        return [rec.trade_id, _fmt_ts(rec.timestamp), rec.delivery_day.isoformat(), rec.delivery_quarter, _num(rec.price), _num(rec.volume), rec.market_id]
    if kind == "fundamentals":
        return [rec.name, _fmt_ts(rec.timestamp), _num(rec.actual), _num(rec.forecast), rec.granularity, rec.delay]
    if kind == "auction_prices":
        return [rec.delivery_day.isoformat(), rec.delivery_quarter, _num(rec.price)]
    if kind == "curves":
        return [rec.delivery_day.isoformat(), rec.delivery_quarter, rec.side, _num(rec.price), _num(rec.volume)]
    raise ValueError(f"unknown schema {kind!r}")


def load_csv(path, schema_kind):
    """Read and validate one of the CSV schemas in ``SCHEMAS``.

    Raises ``DataError`` naming the offending line for missing columns,
    unparseable fields or invariant violations.
    """
    columns = SCHEMAS[schema_kind]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        records = []
        for row in reader:
            try:
                records.append(_parse_row(schema_kind, row))
            except (ValueError, TypeError, KeyError) as exc:
                raise DataError(f"{path}:{reader.line_num}: {exc}") from None
    return records


def write_records(fh, records, schema_kind):
    """Write a header and ``records`` to an open text handle."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SCHEMAS[schema_kind])
    for rec in records:
        writer.writerow(_format_row(schema_kind, rec))


def write_csv(path, records, schema_kind):
    with open(path, "w", newline="") as fh:
        write_records(fh, records, schema_kind)
