"""Feature vectors at a forecast origin: differencing, standardization, lags,
availability rules and the merit-order slope measure."""

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from .market_data import (
    INTERVAL_MIN,
    DataError,
    availability_floor,
    delivery_start_minute,
    origin_index,
)

CHANNEL_KINDS = (
    "last_price",
    "price_diff_lags",
    "volume_diff_lags",
    "rolling_volume_sum",
    "active_interval_count",
    "weekday",
    "exogenous_level",
    "exogenous_forecast_error",
    "scenario_delta",
)
PRICE_BOUNDS = (-3000.0, 3000.0)
ROLLING_INTERVALS = 12  # the preceding 60 minutes

Origin = namedtuple("Origin", "day quarter m")


@dataclass(frozen=True)
class MarketData:
    """Grids keyed by ``(day, quarter)`` and fundamental series keyed by name."""

    grids: dict
    series: dict = field(default_factory=dict)
    utc_offset: int = 60

    def grid(self, day, quarter):
        try:
            return self.grids[(day, quarter)]
        except KeyError:
            raise DataError(f"no grid for delivery {day} q{quarter}") from None

    @property
    def days(self):
        return sorted({d for d, _ in self.grids})


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    kind: str
    source: str = None
    shift: int = 0
    granularity: int = 15
    field: str = "actual"

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"channel {self.name}: unknown kind {self.kind!r}")
        if self.kind.startswith("exogenous") or self.kind == "scenario_delta":
            if not self.source:
                raise ValueError(f"channel {self.name}: {self.kind} needs a source series")
        if self.field not in ("actual", "forecast"):
            raise ValueError(f"channel {self.name}: field must be actual or forecast")


@dataclass(frozen=True)
class FeatureSpec:
    channels: tuple
    lags: tuple = tuple(range(1, 32))
    horizon: int = 31

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "lags", tuple(self.lags))
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")

    def validate(self, data):
        for c in self.channels:
            if c.source and c.source not in data.series:
                raise DataError(f"channel {c.name} references unknown series {c.source!r}")

    def channel_width(self, channel):
        if channel.kind in ("price_diff_lags", "volume_diff_lags"):
            return len(self.lags)
        if channel.kind == "weekday":
            return 7
        if channel.kind == "scenario_delta":
            return 2 * scenario_steps(self.horizon, channel.granularity)
        return 1

    def layout(self):
        """Map channel name to its slice in the assembled vector (declaration order)."""
        out, start = {}, 0
        for c in self.channels:
            w = self.channel_width(c)
            out[c.name] = slice(start, start + w)
            start += w
        return out

    @property
    def dimension(self):
        return sum(self.channel_width(c) for c in self.channels)

    def without(self, kind):
        return FeatureSpec(tuple(c for c in self.channels if c.kind != kind), self.lags, self.horizon)

    def scenario_channels(self):
        return [c for c in self.channels if c.kind == "scenario_delta"]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    origin: Origin
    values: np.ndarray
    standardization: tuple = None


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-column mean and population std from a training window."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows):
        rows = np.asarray(rows, dtype=float)
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, rows):
        return (np.asarray(rows, dtype=float) - self.mean) / self.std

    def invert(self, rows):
        return np.asarray(rows, dtype=float) * self.std + self.mean


# ---------------------------------------------------------------------------
# path transforms


def difference_path(prices, m):
    prices = np.asarray(prices, dtype=float)
    if not 0 <= m < prices.size:
        raise IndexError(f"origin {m} outside path of length {prices.size}")
    return prices - prices[m]


def standardize(path):
    """Return ``(z, mean, std)`` using the population std; constant paths get std 1."""
    path = np.asarray(path, dtype=float)
    if path.size == 0:
        raise ValueError("cannot standardize an empty path")
    mean = float(path.mean())
    std = float(path.std())
    if not std > 0:
        std = 1.0
    return (path - mean) / std, mean, std


def destandardize(path, mean, std):
    return np.asarray(path, dtype=float) * std + mean


# ---------------------------------------------------------------------------
# assembly


def forecast_origin(day, quarter, lead_minutes=185):
    return Origin(day, quarter, origin_index(quarter, lead_minutes))


def origin_minute(data, origin):
    """Epoch minute at which interval ``m`` closes, i.e. the forecasting time."""
    grid = data.grid(origin.day, origin.quarter)
    return grid.interval_end(origin.m)


def scenario_steps(horizon, granularity):
    """Most fundamental periods an ``horizon``-step path can touch, whatever its phase."""
    span = INTERVAL_MIN * (horizon - 1)
    return span // granularity + 1 + (1 if span % granularity else 0)


def scenario_period_starts(t_origin, horizon, granularity):
    """Start minutes of the fundamental periods covering path steps 1..horizon."""
    first = granularity * (t_origin // granularity)
    return first + granularity * np.arange(scenario_steps(horizon, granularity), dtype=np.int64)


def step_to_period(t_origin, horizon, granularity):
    """Index into ``scenario_period_starts`` for each path step 1..horizon."""
    starts = t_origin + INTERVAL_MIN * np.arange(horizon, dtype=np.int64)
    return starts // granularity - t_origin // granularity


def sign_split(delta):
    """Signed positive and negative parts, concatenated: ``delta = pos + neg``."""
    delta = np.asarray(delta, dtype=float)
    return np.concatenate([np.where(delta > 0, delta, 0.0), np.where(delta < 0, delta, 0.0)])


def realized_scenario_delta(series, t_origin, horizon, delay):
    """Known-minus-future forecast-error path of ``series`` seen from ``t_origin``."""
    g = series.granularity
    known = series.error_at(availability_floor(t_origin, delay, g))
    future = series.error_at(scenario_period_starts(t_origin, horizon, g))
    return known - future


def _channel_values(spec, channel, data, origin, grid, t_m, role):
    m = origin.m
    if channel.kind == "last_price":
        return [grid.prices[m]]
    if channel.kind == "price_diff_lags":
        if m - max(spec.lags) < 0:
            raise DataError(f"origin {m} too early for lag {max(spec.lags)}")
        return [grid.prices[m] - grid.prices[m - k] for k in spec.lags]
    if channel.kind == "volume_diff_lags":
        if m - max(spec.lags) < 0:
            raise DataError(f"origin {m} too early for lag {max(spec.lags)}")
        return [grid.volumes[m] - grid.volumes[m - k] for k in spec.lags]
    if channel.kind in ("rolling_volume_sum", "active_interval_count"):
        window = grid.volumes[max(0, m - ROLLING_INTERVALS + 1) : m + 1]
        if channel.kind == "rolling_volume_sum":
            return [float(window.sum())]
        return [float(np.count_nonzero(window))]
    if channel.kind == "weekday":
        onehot = np.zeros(7)
        onehot[origin.day.weekday()] = 1.0
        return onehot
    series = data.series.get(channel.source)
    if series is None:
        raise DataError(f"channel {channel.name}: series {channel.source!r} unavailable")
    g = channel.granularity
    if channel.kind == "exogenous_level":
        if channel.field == "forecast":
            start = delivery_start_minute(origin.day, origin.quarter, data.utc_offset)
            return [series.forecast_at(g * (start // g))]
        return [series.actual_at(availability_floor(t_m, channel.shift, g))]
    if channel.kind == "exogenous_forecast_error":
        return [series.error_at(availability_floor(t_m, channel.shift, g))]
    if channel.kind == "scenario_delta":
        if role == "forecast":
            return np.zeros(spec.channel_width(channel))
        return sign_split(realized_scenario_delta(series, t_m, spec.horizon, channel.shift))
    raise ValueError(channel.kind)


def assemble_features(spec, data, origin, standardization=None, role="forecast"):
    """Raw (or standardized) feature vector for one forecast origin.

    ``role="train"`` fills ``scenario_delta`` channels with the realized
    forecast-error path, which is only legitimate for past training samples;
    at ``role="forecast"`` those channels are zero until a scenario is
    substituted.
    """
    grid = data.grid(origin.day, origin.quarter)
    if not 0 <= origin.m < grid.prices.size:
        raise DataError(f"origin {origin.m} outside grid")
    t_m = grid.interval_end(origin.m)
    parts = [np.atleast_1d(np.asarray(_channel_values(spec, c, data, origin, grid, t_m, role), dtype=float)) for c in spec.channels]
    values = np.concatenate(parts) if parts else np.zeros(0)
    if not np.all(np.isfinite(values)):
        raise DataError(f"non-finite feature at origin {origin}")
    if standardization is not None:
        values = standardization.apply(values)
        return FeatureVector(origin, values, (standardization.mean, standardization.std))
    return FeatureVector(origin, values, None)


def target_path(data, origin, horizon):
    """Differenced realized path ``P(m+h) - P(m)`` for ``h = 1..horizon``."""
    grid = data.grid(origin.day, origin.quarter)
    end = origin.m + horizon + 1
    if end > grid.prices.size:
        raise DataError(f"grid too short for a {horizon}-step path at {origin}")
    return difference_path(grid.prices[: end], origin.m)[origin.m + 1 :]


def default_feature_spec(series_names=("load", "wind", "solar"), horizon=31, lags=tuple(range(1, 32)), delay=76, scenarios=True):
    """Default channel roster over the given fundamental series."""
    channels = [
        ChannelSpec("last_price", "last_price"),
        ChannelSpec("price_diffs", "price_diff_lags"),
        ChannelSpec("volume_diffs", "volume_diff_lags"),
        ChannelSpec("volume_60min", "rolling_volume_sum"),
        ChannelSpec("active_intervals", "active_interval_count"),
        ChannelSpec("weekday", "weekday"),
    ]
    for name in series_names:
        channels.append(ChannelSpec(f"{name}_actual", "exogenous_level", name, delay, 15, "actual"))
        channels.append(ChannelSpec(f"{name}_dayahead", "exogenous_level", name, 0, 15, "forecast"))
        channels.append(ChannelSpec(f"{name}_error", "exogenous_forecast_error", name, delay, 15))
    if scenarios:
        for name in series_names:
            channels.append(ChannelSpec(f"{name}_scenario", "scenario_delta", name, delay, 15))
    return FeatureSpec(tuple(channels), tuple(lags), horizon)


# ---------------------------------------------------------------------------
# merit order


@dataclass(frozen=True)
class SupplyCurve:
    """Auction order-book bids as ``(price, volume, side)`` triples."""

    bids: tuple
    price_bounds: tuple = PRICE_BOUNDS

    def __post_init__(self):
        object.__setattr__(self, "bids", tuple((float(p), float(v), str(s)) for p, v, s in self.bids))
        lo, hi = self.price_bounds
        for p, v, s in self.bids:
            if not v > 0:
                raise ValueError(f"bid volume must be positive, got {v}")
            if not lo <= p <= hi:
                raise ValueError(f"bid price {p} outside {self.price_bounds}")
            if s not in ("buy", "sell"):
                raise ValueError(f"unknown side {s!r}")

    @classmethod
    def from_bids(cls, bids):
        return cls(tuple((b.price, b.volume, b.side) for b in bids))


def transformed_supply(curve, inelastic_demand):
    """Breakpoints of the transformed supply curve.

    Price-dependent buy bids become sell-side volume: at price ``p`` the curve
    holds all sell bids priced ``<= p`` plus all buy bids priced ``< p``,
    shifted left by ``inelastic_demand``.  Returns ``(prices, volumes)`` with
    ``volumes[k]`` the cumulative volume once the price reaches ``prices[k]``.
    """
    lo, hi = curve.price_bounds
    sells = sorted((p, v) for p, v, s in curve.bids if s == "sell")
    buys = sorted((p, v) for p, v, s in curve.bids if s == "buy" and p < hi)
    levels = sorted({p for p, _ in sells} | {np.nextafter(p, np.inf) for p, _ in buys})
    prices = np.array(levels, dtype=float)
    vols = np.empty(prices.size)
    for k, p in enumerate(prices):
        vols[k] = sum(v for q, v in sells if q <= p) + sum(v for q, v in buys if q < p)
    vols -= inelastic_demand
    if np.any(np.diff(vols) < 0):
        raise AssertionError("transformed supply curve is not monotone")
    return prices, vols


def _price_at_volume(prices, vols, v, bounds):
    # right-continuous inverse: smallest breakpoint whose cumulative volume exceeds v
    k = np.searchsorted(vols, v, side="right")
    if k >= prices.size:
        return bounds[1]
    return prices[k]


def merit_order_slope(curve, inelastic_demand, ref_price, deltas=(500.0, 1000.0, 2000.0)):
    """Central finite-difference slopes of the transformed supply curve around ``ref_price``."""
    if not curve.bids:
        raise ValueError("empty supply curve")
    if any(not d > 0 for d in deltas):
        raise ValueError("volume deltas must be positive")
    prices, vols = transformed_supply(curve, inelastic_demand)
    if not prices[0] <= ref_price <= prices[-1]:
        raise DataError("reference outside transformed curve")
    k = np.searchsorted(prices, ref_price, side="right") - 1
    v_ref = vols[k]
    if prices[k] == ref_price:
        # the reference sits on a flat step: use the middle of its volume range
        v_ref = 0.5 * ((vols[k - 1] if k > 0 else -inelastic_demand) + vols[k])
    out = []
    for d in deltas:
        up = _price_at_volume(prices, vols, v_ref + d, curve.price_bounds)
        down = _price_at_volume(prices, vols, v_ref - d, curve.price_bounds)
        out.append((up - down) / (2.0 * d))
    return out
