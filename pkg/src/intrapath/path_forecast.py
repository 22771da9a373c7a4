"""Multi-step path forecasts with the corrected-kernel SVR and the expanding-window loop."""

import datetime as dt
import logging
from dataclasses import dataclass

import numpy as np

from . import svr
from .features import Standardizer, assemble_features, forecast_origin, target_path
from .market_data import DataError

log = logging.getLogger(__name__)

MODES = ("multi_output", "chain")


@dataclass(frozen=True)
class ForecastConfig:
    horizon: int = 31
    mode: str = "multi_output"
    hyper: svr.SvrHyperParams = svr.SvrHyperParams()
    laplace_levels: tuple = svr.LAPLACE_LEVELS
    gauss_levels: tuple = svr.GAUSS_LEVELS
    per_quarter_models: bool = True
    lead_minutes: int = 185
    width_sample_rows: int = 2000

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True, eq=False)
class TrainingRows:
    """Raw features, auxiliary last prices and differenced targets, one row per origin."""

    keys: tuple
    X: np.ndarray
    aux: np.ndarray
    Y: np.ndarray

    def __len__(self):
        return len(self.keys)

    def subset(self, idx):
        idx = np.asarray(idx)
        return TrainingRows(tuple(self.keys[i] for i in idx), self.X[idx], self.aux[idx], self.Y[idx])

    def columns(self, mask):
        return TrainingRows(self.keys, self.X[:, mask], self.aux, self.Y)


@dataclass(frozen=True, eq=False)
class PathForecast:
    origin: tuple
    values: np.ndarray
    model_fingerprints: tuple = ()

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite path forecast")


@dataclass(frozen=True, eq=False)
class PathModel:
    """Per-step SVR models plus every transform needed to map prices in and out."""

    models: tuple
    mode: str
    x_scaler: Standardizer
    aux_mean: float
    aux_std: float
    y_mean: np.ndarray
    y_std: np.ndarray
    chain_scalers: tuple = ()
    train_Xs: np.ndarray = None
    train_As: np.ndarray = None
    train_Z: np.ndarray = None
    degenerate: bool = False

    @property
    def horizon(self):
        return len(self.models)

    def fingerprints(self):
        return tuple(m.fingerprint() for m in self.models)

    def _aux(self, aux):
        return ((np.asarray(aux, dtype=float) - self.aux_mean) / self.aux_std).reshape(-1, 1)

    def predict_z(self, X, aux):
        """Standardized differenced predictions, ``n x H``."""
        Xs = self.x_scaler.apply(np.atleast_2d(X))
        As = self._aux(aux)
        return _predict_standardized(self, Xs, As)

    def predict_paths(self, X, aux, origin_prices):
        z = self.predict_z(X, aux)
        return to_prices(z, self.y_mean, self.y_std, origin_prices)

    def in_sample_diffs(self):
        """Fitted differenced paths for the training rows (``N x H``)."""
        return self.train_Z * self.y_std + self.y_mean


def to_prices(z, y_mean, y_std, origin_prices):
    """Undo standardization, then differencing: ``P(m) + mean + std * z``."""
    z = np.atleast_2d(z)
    return np.asarray(origin_prices, dtype=float).reshape(-1, 1) + y_mean + y_std * z


def _predict_standardized(pm, Xs, As):
    n = Xs.shape[0]
    out = np.empty((n, pm.horizon))
    feats = Xs
    for h, model in enumerate(pm.models):
        if pm.mode == "chain" and h > 0:
            feats = np.hstack([Xs, pm.chain_scalers[h].apply(out[:, :h])])
        out[:, h] = svr.predict_many(model, feats, As)
    return out


WIDTH_FALLBACK = 1.0


def _kernel_for(Xs, As, config):
    """Kernel widths from the data; a degenerate factor falls back to width 1."""
    dx, dy = svr.pairwise_distances(Xs, As, config.width_sample_rows, np.random.default_rng(0))
    levels = (config.laplace_levels, config.gauss_levels)
    try:
        return svr.fit_kernel_widths(dx, dy, levels), False
    except svr.DegenerateDistances as exc:
        log.debug("kernel width fallback: %s", exc)
        degenerate = not (dx.size and np.quantile(dx, config.laplace_levels[1]) > 0)
        return svr.fit_kernel_widths(dx, dy, levels, fallback=WIDTH_FALLBACK), degenerate


def _prepare(rows, config):
    if len(rows) < 2:
        raise DataError("need at least two training rows")
    if rows.Y.shape[1] != config.horizon:
        raise ValueError(f"targets have {rows.Y.shape[1]} steps, config horizon is {config.horizon}")
    x_scaler = Standardizer.fit(rows.X)
    Xs = x_scaler.apply(rows.X)
    aux_mean = float(rows.aux.mean())
    aux_std = float(rows.aux.std()) or 1.0
    As = ((rows.aux - aux_mean) / aux_std).reshape(-1, 1)
    y_mean = rows.Y.mean(axis=0)
    y_std = rows.Y.std(axis=0)
    y_std = np.where(y_std > 0, y_std, 1.0)
    Z = (rows.Y - y_mean) / y_std
    return x_scaler, Xs, aux_mean, aux_std, As, y_mean, y_std, Z


def fit_multi_output(rows, config=ForecastConfig()):
    """One independent SVR per step on a shared feature vector and shared Gram matrix."""
    x_scaler, Xs, aux_mean, aux_std, As, y_mean, y_std, Z = _prepare(rows, config)
    kernel, degenerate = _kernel_for(Xs, As, config)
    if degenerate:
        log.warning("degenerate training set: all feature rows identical")
    K = svr.gram_matrix(Xs, As, kernel)
    models = []
    fitted = np.empty_like(Z)
    for h in range(config.horizon):
        model = svr.solve_dual(K, Z[:, h], config.hyper, Xs, As, kernel)
        models.append(model)
        fitted[:, h] = svr.predict_from_gram(model, K)
    return PathModel(tuple(models), "multi_output", x_scaler, aux_mean, aux_std, y_mean, y_std, (), Xs, As, fitted, degenerate)


def fit_chain(rows, config=ForecastConfig()):
    """Sequential models; step h also sees the in-sample predictions of steps < h."""
    x_scaler, Xs, aux_mean, aux_std, As, y_mean, y_std, Z = _prepare(rows, config)
    models, scalers = [], [None]
    fitted = np.empty_like(Z)
    degenerate = False
    for h in range(config.horizon):
        if h == 0:
            feats = Xs
        else:
            sc = Standardizer.fit(fitted[:, :h])
            scalers.append(sc)
            feats = np.hstack([Xs, sc.apply(fitted[:, :h])])
        kernel, deg = _kernel_for(feats, As, config)
        degenerate |= deg
        K = svr.gram_matrix(feats, As, kernel)
        model = svr.solve_dual(K, Z[:, h], config.hyper, feats, As, kernel)
        models.append(model)
        fitted[:, h] = svr.predict_from_gram(model, K)
    return PathModel(tuple(models), "chain", x_scaler, aux_mean, aux_std, y_mean, y_std, tuple(scalers), Xs, As, fitted, degenerate)


def fit_path_model(rows, config=ForecastConfig()):
    if config.mode == "chain":
        return fit_chain(rows, config)
    return fit_multi_output(rows, config)


def forecast_path(path_model, features, origin_price, origin=None):
    """Point path for one origin; ``features`` are raw (unstandardized) values."""
    if path_model is None or path_model.x_scaler is None:
        raise ValueError("missing transform state")
    x = getattr(features, "values", features)
    if origin is None:
        origin = getattr(features, "origin", None)
    values = path_model.predict_paths(np.atleast_2d(x), [origin_price], [origin_price])[0]
    return PathForecast(origin, values, path_model.fingerprints())


# ---------------------------------------------------------------------------
# expanding window


@dataclass(frozen=True)
class ExpandingWindowPlan:
    train_start: dt.date
    first_test_day: dt.date
    last_test_day: dt.date

    def __post_init__(self):
        if not self.train_start < self.first_test_day <= self.last_test_day:
            raise ValueError("need train_start < first_test_day <= last_test_day")

    def test_days(self):
        n = (self.last_test_day - self.first_test_day).days + 1
        return [self.first_test_day + dt.timedelta(days=k) for k in range(n)]


class RowCache:
    """Memoized raw training rows per delivery (features never depend on the window)."""

    def __init__(self, spec, data, horizon, lead_minutes=185):
        self.spec = spec
        self.data = data
        self.horizon = horizon
        self.lead = lead_minutes
        self._train = {}
        self._forecast = {}

    def train_row(self, day, quarter):
        key = (day, quarter)
        if key not in self._train:
            origin = forecast_origin(day, quarter, self.lead)
            fv = assemble_features(self.spec, self.data, origin, role="train")
            price = float(self.data.grid(day, quarter).prices[origin.m])
            self._train[key] = (origin, fv.values, price, target_path(self.data, origin, self.horizon))
        return self._train[key]

    def forecast_row(self, day, quarter):
        key = (day, quarter)
        if key not in self._forecast:
            origin = forecast_origin(day, quarter, self.lead)
            fv = assemble_features(self.spec, self.data, origin, role="forecast")
            price = float(self.data.grid(day, quarter).prices[origin.m])
            self._forecast[key] = (origin, fv.values, price)
        return self._forecast[key]

    def rows(self, keys):
        got = [self.train_row(d, q) for d, q in keys]
        return TrainingRows(
            tuple(g[0] for g in got),
            np.array([g[1] for g in got]),
            np.array([g[2] for g in got]),
            np.array([g[3] for g in got]),
        )


def training_keys(data, day, quarter, plan, config):
    days = [d for d in data.days if plan.train_start <= d < day]
    if config.per_quarter_models:
        return [(d, quarter) for d in days if (d, quarter) in data.grids]
    return [(d, q) for d in days for q in sorted({k[1] for k in data.grids}) if (d, q) in data.grids]


def run_expanding_window(plan, data, config, spec, downstream=None, quarters=None, min_train_days=2):
    """Fit on all days before each test day and forecast every delivery at its origin.

    ``downstream(origin, path_model, forecast, rows, cache)`` is called per
    delivery; its return value is collected.  Returns ``{(day, quarter): result}``
    (the ``PathForecast`` when no downstream is given).
    """
    spec.validate(data)
    cache = RowCache(spec, data, config.horizon, config.lead_minutes)
    quarters = quarters or sorted({q for _, q in data.grids})
    out = {}
    for day in plan.test_days():
        if len([d for d in data.days if plan.train_start <= d < day]) < min_train_days:
            raise DataError(f"insufficient training days before {day}")
        pooled = None
        for quarter in quarters:
            if (day, quarter) not in data.grids:
                continue
            keys = training_keys(data, day, quarter, plan, config)
            if config.per_quarter_models or pooled is None:
                rows = cache.rows(keys)
                pm = fit_path_model(rows, config)
                if not config.per_quarter_models:
                    pooled = (rows, pm)
            else:
                rows, pm = pooled
            origin, x, price = cache.forecast_row(day, quarter)
            fc = forecast_path(pm, x, price, origin)
            out[(day, quarter)] = downstream(origin, pm, fc, rows, cache) if downstream else fc
    return out


# ---------------------------------------------------------------------------
# compact persistence: duals and transforms only; training rows live elsewhere


def path_model_arrays(pm):
    """Arrays sufficient to rebuild ``pm`` given the same raw training rows."""
    k = [m.kernel for m in pm.models]
    return {
        "mode": np.array(pm.mode),
        "beta": np.stack([m.alpha_star - m.alpha for m in pm.models]),
        "bias": np.array([m.bias for m in pm.models]),
        "kernel": np.array([[c.l, c.g, c.alpha1_laplace, c.alpha2_laplace, c.alpha1_gauss, c.alpha2_gauss] for c in k]),
        "converged": np.array([m.converged for m in pm.models]),
        "iterations": np.array([m.iterations for m in pm.models]),
        "x_mean": pm.x_scaler.mean,
        "x_std": pm.x_scaler.std,
        "aux": np.array([pm.aux_mean, pm.aux_std]),
        "y_mean": pm.y_mean,
        "y_std": pm.y_std,
        "fitted": pm.train_Z,
        "degenerate": np.array(pm.degenerate),
    }


def path_model_from_arrays(arrays, rows):
    """Inverse of ``path_model_arrays`` for the raw ``rows`` the model was fitted on."""
    beta = np.asarray(arrays["beta"])
    if beta.shape[1] != len(rows):
        raise ValueError(f"model has {beta.shape[1]} training rows, got {len(rows)}")
    mode = str(arrays["mode"])
    x_scaler = Standardizer(np.asarray(arrays["x_mean"]), np.asarray(arrays["x_std"]))
    aux_mean, aux_std = (float(v) for v in arrays["aux"])
    Xs = x_scaler.apply(rows.X)
    As = ((rows.aux - aux_mean) / aux_std).reshape(-1, 1)
    fitted = np.asarray(arrays["fitted"])
    models, scalers = [], [None]
    for h in range(beta.shape[0]):
        feats = Xs
        if mode == "chain" and h > 0:
            sc = Standardizer.fit(fitted[:, :h])
            scalers.append(sc)
            feats = np.hstack([Xs, sc.apply(fitted[:, :h])])
        b = beta[h]
        support = np.flatnonzero(b != 0.0)
        models.append(
            svr.SvrModel(
                np.maximum(-b, 0.0),
                np.maximum(b, 0.0),
                float(arrays["bias"][h]),
                support,
                feats[support],
                As[support],
                svr.KernelParams(*(float(v) for v in arrays["kernel"][h])),
                bool(arrays["converged"][h]),
                int(arrays["iterations"][h]),
            )
        )
    return PathModel(
        tuple(models), mode, x_scaler, aux_mean, aux_std, np.asarray(arrays["y_mean"]), np.asarray(arrays["y_std"]),
        tuple(scalers) if mode == "chain" else (), Xs, As, fitted, bool(arrays["degenerate"]),
    )
