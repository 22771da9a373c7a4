"""Scenario ensembles (historical, fundamental, naive) and Support Vector Sorting."""

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .features import realized_scenario_delta, scenario_period_starts, sign_split
from .market_data import DataError, availability_floor
from .quantiles import lower_median

log = logging.getLogger(__name__)

KINDS = ("historical", "fundamental", "naive")


@dataclass(frozen=True, eq=False)
class ScenarioEnsemble:
    origin: tuple
    paths: np.ndarray
    weights: np.ndarray
    provenance: tuple
    kind: str
    flagged: bool = False

    def __post_init__(self):
        paths = np.atleast_2d(np.asarray(self.paths, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "weights", w)
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if paths.shape[0] == 0:
            raise ValueError("empty ensemble")
        if w.shape != (paths.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to one")
        if len(self.provenance) != paths.shape[0]:
            raise ValueError("one provenance label per scenario required")

    @property
    def size(self):
        return self.paths.shape[0]

    @property
    def horizon(self):
        return self.paths.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return ScenarioEnsemble(
            self.origin, self.paths[idx], np.full(idx.size, 1.0 / idx.size), tuple(self.provenance[i] for i in idx), self.kind
        )


def _uniform(n):
    return np.full(n, 1.0 / n)


def historical_ensemble(point_forecast, residual_paths, provenance=None):
    """Point forecast plus each in-sample residual path."""
    r = np.atleast_2d(np.asarray(residual_paths, dtype=float))
    if r.size == 0:
        raise ValueError("empty residual set")
    values = np.asarray(getattr(point_forecast, "values", point_forecast), dtype=float)
    if r.shape[1] != values.size:
        raise ValueError(f"residual paths have {r.shape[1]} steps, forecast has {values.size}")
    prov = tuple(provenance) if provenance is not None else tuple(range(r.shape[0]))
    return ScenarioEnsemble(getattr(point_forecast, "origin", None), values + r, _uniform(r.shape[0]), prov, "historical")


# ---------------------------------------------------------------------------
# fundamental scenarios


@dataclass(frozen=True, eq=False)
class FundamentalScenario:
    variable: str
    delta_known: float
    delta_future: np.ndarray
    delta_fs: np.ndarray

    @property
    def sign_split(self):
        return sign_split(self.delta_fs)


def build_fundamental_scenarios(series, training_origin_minutes, forecast_origin_minute, horizon, delay):
    """One forecast-error difference path per training origin, at native granularity."""
    out = []
    g = series.granularity
    for t in training_origin_minutes:
        if t >= forecast_origin_minute:
            raise ValueError("training origins must precede the forecast origin")
        starts = scenario_period_starts(t, horizon, g)
        known_at = availability_floor(t, delay, g)
        if not (series.covers(known_at, known_at) and series.covers(int(starts[0]), int(starts[-1]))):
            raise DataError(f"series {series.name}: coverage gap around origin minute {t}")
        known = float(series.error_at(known_at))
        future = np.asarray(series.error_at(starts), dtype=float)
        fs = realized_scenario_delta(series, t, horizon, delay)
        out.append(FundamentalScenario(series.name, known, future, fs))
    return out


def fundamental_ensemble(path_model, base_features, aux, origin_price, scenarios, channel_slices, origin=None, provenance=None):
    """Forecast one path per scenario by substituting its sign-split deltas.

    ``scenarios`` maps each channel name to a list of ``FundamentalScenario``
    (one per training sample, aligned across channels); ``channel_slices``
    maps channel names to slices of the raw feature vector.
    """
    if not scenarios:
        raise ValueError("no scenarios")
    n = None
    X = None
    for name, scen in scenarios.items():
        if name not in channel_slices:
            raise KeyError(f"channel mapping missing for {name!r}")
        sl = channel_slices[name]
        if n is None:
            n = len(scen)
            X = np.tile(np.asarray(base_features, dtype=float), (n, 1))
        elif len(scen) != n:
            raise ValueError("scenario sets are not aligned")
        X[:, sl] = np.array([s.sign_split for s in scen])
    return fundamental_ensemble_from_rows(path_model, X, aux, origin_price, origin, provenance)


def fundamental_ensemble_from_rows(path_model, X, aux, origin_price, origin=None, provenance=None):
    """As ``fundamental_ensemble`` with the substituted raw feature rows given directly."""
    n = X.shape[0]
    paths = path_model.predict_paths(X, np.full(n, aux), np.full(n, origin_price))
    prov = tuple(provenance) if provenance is not None else tuple(range(n))
    return ScenarioEnsemble(origin, paths, _uniform(n), prov, "fundamental")


def naive_ensemble(increment_paths, last_price, n_draws=1000, rng=None, origin=None):
    """Resample whole historical increment paths and add them cumulatively to ``last_price``."""
    inc = np.atleast_2d(np.asarray(increment_paths, dtype=float))
    if inc.shape[0] == 0:
        raise ValueError("empty history")
    rng = rng if rng is not None else np.random.default_rng(0)
    draws = rng.integers(0, inc.shape[0], size=n_draws)
    paths = last_price + np.cumsum(inc[draws], axis=1)
    prov = tuple(f"naive draw {k}: {int(d)}" for k, d in enumerate(draws))
    return ScenarioEnsemble(origin, paths, _uniform(n_draws), prov, "naive")


# ---------------------------------------------------------------------------
# support vector sorting


@dataclass(frozen=True, eq=False)
class SvsRanking:
    scenario_weights: np.ndarray
    order: np.ndarray
    selected_count: int = 0


def svs_weights(per_step_models, index_map):
    """Summed absolute dual coefficients ``sum_h |alpha*_hi - alpha_hi|`` per scenario.

    ``index_map[k]`` is the training index behind scenario ``k``.
    """
    n_train = {m.n_train for m in per_step_models}
    if len(n_train) != 1:
        raise ValueError("step models disagree on the training size")
    n_train = n_train.pop()
    idx = np.asarray(index_map, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n_train):
        raise IndexError("scenario index outside the training sample")
    total = np.zeros(n_train)
    for m in per_step_models:
        total += np.abs(m.alpha_star - m.alpha)
    w = total[idx]
    return SvsRanking(w, rank_order(w))


def rank_order(weights):
    """Descending weight order; ties keep ascending index."""
    return np.argsort(-np.asarray(weights, dtype=float), kind="stable")


def wasserstein1(xa, xb, wa=None, wb=None):
    """Exact first-order Wasserstein distance between two weighted 1-D samples."""
    xa = np.atleast_1d(np.asarray(xa, dtype=float))
    xb = np.atleast_1d(np.asarray(xb, dtype=float))
    if xa.size == 0 or xb.size == 0:
        raise ValueError("empty sample")
    wa = _uniform(xa.size) if wa is None else np.asarray(wa, dtype=float)
    wb = _uniform(xb.size) if wb is None else np.asarray(wb, dtype=float)
    return _kernels.w1(xa, wa, xb, wb)


def _set_distance(paths_a, paths_b, pooled):
    if pooled:
        return wasserstein1(paths_a.ravel(), paths_b.ravel())
    return float(np.mean([wasserstein1(paths_a[:, u], paths_b[:, u]) for u in range(paths_a.shape[1])]))


def svs_stop_count(paths, order, omega=0.01, window=10, minimum=10, pooled=True):
    """Number of scenarios kept by the Wasserstein stopping rule.

    ``W[n]`` compares the first ``n`` and first ``n-1`` ranked scenarios
    (defined from ``n = 2``) and ``D[n] = W[n-1] - W[n]`` from ``n = 3``.
    The moving average runs over the last ``window`` defined ``|D|`` values.
    """
    paths = np.atleast_2d(paths)
    total = paths.shape[0]
    prev_w = None
    deltas = []
    for n in range(2, total + 1):
        w = _set_distance(paths[order[:n]], paths[order[: n - 1]], pooled)
        if prev_w is not None:
            deltas.append(abs(prev_w - w))
        prev_w = w
        if n >= minimum and deltas and np.mean(deltas[-window:]) < omega:
            return n
    return total


def select_scenarios_svs(ranking, ensemble, omega=0.01, ma_window=10, minimum=10, pooled=True):
    """Prefix of the SVS order chosen by the stopping rule, with uniform weights."""
    if ensemble.size < minimum:
        log.info("ensemble of %d scenarios is below the SVS minimum %d", ensemble.size, minimum)
        out = ensemble.subset(np.arange(ensemble.size))
        return ScenarioEnsemble(out.origin, out.paths, out.weights, out.provenance, out.kind, True), SvsRanking(
            ranking.scenario_weights, ranking.order, ensemble.size
        )
    if np.asarray(ranking.order).size != ensemble.size:
        raise ValueError("ranking and ensemble sizes differ")
    k = svs_stop_count(ensemble.paths, ranking.order, omega, ma_window, minimum, pooled)
    chosen = np.asarray(ranking.order[:k])
    return ensemble.subset(chosen), SvsRanking(ranking.scenario_weights, ranking.order, k)


def empirical_median_path(ensemble):
    """Per-step weighted lower median."""
    return np.array([lower_median(ensemble.paths[:, u], ensemble.weights) for u in range(ensemble.horizon)])
