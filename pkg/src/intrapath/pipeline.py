"""Pipeline stages behind the CLI commands and their on-disk artifacts.

Layout under the output directory::

    data/                     synth: transactions, auction prices, fundamentals (CSV)
    store/market.npz          ingest: canonical grids and fundamental series
    models/features.npz       fit: raw train and forecast rows for every delivery
    models/<day>.npz          fit: base and full path models per quarter
    ensembles/<day>.npz       forecast: scenario paths, SVS weights and counts
    ensembles/<day>.bands.csv forecast: point forecast, median and band per ensemble set
    backtest/...              backtest: trade ledgers, audits, benchmarks, summary
    gridsearch/...            gridsearch: score tables and the best cell per strategy
    report/...                report: metrics.json, pinball.csv, plot-data CSVs
    manifests/<command>.json  config hash and checksums of what the command wrote

Every stage reads only upstream artifacts and writes only its own directory.
"""

import csv
import datetime as dt
import io
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import artifacts, metrics
from ._accel import backend_name
from .artifacts import MissingArtifact, atomic_open, require
from .bands import build_band
from .config import FAMILY_CHOICES, ConfigError
from .ensembles import (
    ScenarioEnsemble,
    empirical_median_path,
    fundamental_ensemble_from_rows,
    historical_ensemble,
    naive_ensemble,
    rank_order,
    svs_stop_count,
    svs_weights,
)
from .features import MarketData, default_feature_spec
from .market_data import (
    DataError,
    FundamentalSeries,
    VwapGrid,
    aggregate_all,
    generate_synthetic_market,
    grids_to_auctions,
    grids_to_transactions,
    load_csv,
    series_from_rows,
    series_to_rows,
    write_records,
)
from .path_forecast import (
    ExpandingWindowPlan,
    RowCache,
    TrainingRows,
    fit_path_model,
    path_model_arrays,
    path_model_from_arrays,
    training_keys,
)
from .seeding import stream
from .strategies import (
    BAND_GRID,
    MEDIAN_GRID,
    CurveCache,
    StrategySpec,
    crystal_ball,
    grid_cells,
    grid_search,
    naive_endpoints,
    simulate_strategy,
)

log = logging.getLogger(__name__)

__all__ = ["COMMANDS", "MissingArtifact", "run_command"]

STORE = "store/market.npz"
FEATURES = "models/features.npz"
VARIANTS = ("base", "full")
KIND_MODEL = {"historical": "base", "fundamental": "full"}


# ---------------------------------------------------------------------------
# small helpers


def _path(out, rel):
    return rel if os.path.isabs(rel) else os.path.join(out, rel)


def _day_tag(day):
    return day.isoformat()


def _save_npz(path, arrays):
    with atomic_open(path, "wb") as fh:
        np.savez(fh, **arrays)


def _load_npz(path, kind):
    require(path, kind)
    with np.load(path, allow_pickle=False) as z:
        return {k: z[k] for k in z.files}


def _write_csv_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    artifacts.write_text(path, buf.getvalue())


def _write_records(path, records, kind):
    with atomic_open(path, "w", newline="") as fh:
        write_records(fh, records, kind)


def _fmt(x):
    return repr(float(x))


def _finish(cfg, out, command, subdirs, extra=None):
    sums = artifacts.tree_checksums(out, subdirs)
    info = {"backend": backend_name()}
    info.update(extra or {})
    return artifacts.write_manifest(out, command, cfg.config_hash(), sums, info)


def test_plan(days, window):
    """Expanding-window plan over the stored days."""
    if len(days) < window.initial_train_days + window.test_days:
        raise DataError(f"{len(days)} days stored, window needs {window.initial_train_days + window.test_days}")
    first = days[window.initial_train_days]
    last = days[window.initial_train_days + window.test_days - 1]
    return ExpandingWindowPlan(days[0], first, last)


# ---------------------------------------------------------------------------
# canonical store


def save_store(path, data):
    keys = sorted(data.grids)
    grids = [data.grids[k] for k in keys]
    lengths = np.array([g.prices.size for g in grids], dtype=np.int64)
    arrays = {
        "day": np.array([k[0].toordinal() for k in keys], dtype=np.int64),
        "quarter": np.array([k[1] for k in keys], dtype=np.int64),
        "origin": np.array([g.origin for g in grids], dtype=np.int64),
        "seed_price": np.array([g.auction_seed_price for g in grids]),
        "offsets": np.concatenate([[0], np.cumsum(lengths)]),
        "prices": np.concatenate([g.prices for g in grids]) if grids else np.empty(0),
        "volumes": np.concatenate([g.volumes for g in grids]) if grids else np.empty(0),
        "utc_offset": np.array(data.utc_offset),
        "series_names": np.array(sorted(data.series), dtype=str),
    }
    for name, s in sorted(data.series.items()):
        arrays[f"series.{name}.times"] = s.times
        arrays[f"series.{name}.actuals"] = s.actuals
        arrays[f"series.{name}.forecasts"] = s.forecasts
        arrays[f"series.{name}.meta"] = np.array([s.granularity, s.availability_delay], dtype=np.int64)
    _save_npz(path, arrays)


def load_store(path):
    z = _load_npz(path, "store")
    grids = {}
    off = z["offsets"]
    for i, (d, q) in enumerate(zip(z["day"], z["quarter"])):
        day = dt.date.fromordinal(int(d))
        sl = slice(int(off[i]), int(off[i + 1]))
        grids[(day, int(q))] = VwapGrid(day, int(q), int(z["origin"][i]), z["prices"][sl], z["volumes"][sl], float(z["seed_price"][i]))
    series = {}
    for name in z["series_names"]:
        name = str(name)
        g, delay = (int(v) for v in z[f"series.{name}.meta"])
        series[name] = FundamentalSeries(
            name, g, z[f"series.{name}.times"], z[f"series.{name}.actuals"], z[f"series.{name}.forecasts"], delay
        )
    return MarketData(grids, series, int(z["utc_offset"]))


# ---------------------------------------------------------------------------
# synth and ingest


def cmd_synth(cfg, out):
    grids, series = generate_synthetic_market(cfg.synth)
    log.info("synthesized %d deliveries over %d days", len(grids), cfg.synth.n_days)
    _write_records(_path(out, cfg.data.transactions), grids_to_transactions(grids), "transactions")
    _write_records(_path(out, cfg.data.auction_prices), grids_to_auctions(grids), "auction_prices")
    _write_records(_path(out, cfg.data.fundamentals), series_to_rows(series), "fundamentals")
    paths = [cfg.data.transactions, cfg.data.auction_prices, cfg.data.fundamentals]
    sums = {os.path.relpath(_path(out, p), out): artifacts.sha256_file(_path(out, p)) for p in paths}
    return artifacts.write_manifest(out, "synth", cfg.config_hash(), sums, {"backend": backend_name()})


def cmd_ingest(cfg, out):
    files = {k: require(_path(out, getattr(cfg.data, k)), "data") for k in ("transactions", "auction_prices", "fundamentals")}
    trades = load_csv(files["transactions"], "transactions")
    auctions = load_csv(files["auction_prices"], "auction_prices")
    series = series_from_rows(load_csv(files["fundamentals"], "fundamentals"))
    grids = aggregate_all(trades, auctions, cfg.synth.utc_offset)
    data = MarketData(grids, series, cfg.synth.utc_offset)
    missing = [n for n, _ in cfg.synth.fundamentals if n not in series]
    if missing:
        raise DataError(f"fundamentals file lacks series {', '.join(missing)}")
    log.info("ingested %d trades into %d grids", len(trades), len(grids))
    save_store(_path(out, STORE), data)
    return _finish(cfg, out, "ingest", ["store"])


# ---------------------------------------------------------------------------
# fit


def feature_spec(cfg, data):
    names = [n for n, _ in cfg.synth.fundamentals if n in data.series]
    delay = data.series[names[0]].availability_delay if names else 0
    return default_feature_spec(tuple(names), cfg.forecast.horizon, tuple(range(1, cfg.forecast.horizon + 1)), delay)


def base_columns(spec):
    """Boolean mask of the feature columns outside the scenario channels."""
    mask = np.ones(spec.dimension, dtype=bool)
    lay = spec.layout()
    for c in spec.scenario_channels():
        mask[lay[c.name]] = False
    return mask


@dataclass(frozen=True, eq=False)
class FeatureStore:
    """Raw rows for every delivery, indexed by ``(day, quarter)``."""

    keys: tuple
    X: np.ndarray
    aux: np.ndarray
    Y: np.ndarray
    fkeys: tuple
    FX: np.ndarray
    faux: np.ndarray
    fm: np.ndarray
    base_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.keys)})
        object.__setattr__(self, "_findex", {k: i for i, k in enumerate(self.fkeys)})

    def rows(self, keys):
        idx = np.array([self._index[k] for k in keys], dtype=np.int64)
        return TrainingRows(tuple(keys), self.X[idx], self.aux[idx], self.Y[idx])

    def forecast_row(self, key):
        i = self._findex[key]
        return self.FX[i], float(self.faux[i]), int(self.fm[i])

    def to_arrays(self):
        return {
            "day": np.array([k[0].toordinal() for k in self.keys], dtype=np.int64),
            "quarter": np.array([k[1] for k in self.keys], dtype=np.int64),
            "X": self.X,
            "aux": self.aux,
            "Y": self.Y,
            "fday": np.array([k[0].toordinal() for k in self.fkeys], dtype=np.int64),
            "fquarter": np.array([k[1] for k in self.fkeys], dtype=np.int64),
            "FX": self.FX,
            "faux": self.faux,
            "fm": self.fm,
            "base_mask": self.base_mask,
        }

    @classmethod
    def from_arrays(cls, z):
        keys = tuple((dt.date.fromordinal(int(d)), int(q)) for d, q in zip(z["day"], z["quarter"]))
        fkeys = tuple((dt.date.fromordinal(int(d)), int(q)) for d, q in zip(z["fday"], z["fquarter"]))
        return cls(keys, z["X"], z["aux"], z["Y"], fkeys, z["FX"], z["faux"], z["fm"], z["base_mask"])


def build_feature_store(cfg, data, plan):
    spec = feature_spec(cfg, data)
    spec.validate(data)
    cache = RowCache(spec, data, cfg.forecast.horizon, cfg.forecast.lead_minutes)
    train_keys = sorted(k for k in data.grids if plan.train_start <= k[0] < plan.last_test_day)
    test = set(plan.test_days())
    fkeys = sorted(k for k in data.grids if k[0] in test)
    rows = cache.rows(train_keys)
    fx, faux, fm = [], [], []
    for d, q in fkeys:
        origin, x, price = cache.forecast_row(d, q)
        fx.append(x)
        faux.append(price)
        fm.append(origin.m)
    dim = spec.dimension
    return FeatureStore(
        tuple(train_keys),
        rows.X.reshape(-1, dim),
        rows.aux,
        rows.Y.reshape(-1, cfg.forecast.horizon),
        tuple(fkeys),
        np.array(fx).reshape(-1, dim),
        np.array(faux),
        np.array(fm, dtype=np.int64),
        base_columns(spec),
    )


def load_features(out):
    return FeatureStore.from_arrays(_load_npz(_path(out, FEATURES), "models"))


def _variant_rows(rows, variant, mask):
    return rows if variant == "full" else rows.columns(mask)


def cmd_fit(cfg, out):
    data = load_store(_path(out, STORE))
    plan = test_plan(data.days, cfg.window)
    fs = build_feature_store(cfg, data, plan)
    _save_npz(_path(out, FEATURES), fs.to_arrays())
    n_models = 0
    for day in plan.test_days():
        arrays = {}
        quarters = sorted(q for d, q in fs.fkeys if d == day)
        for q in quarters:
            rows = fs.rows(training_keys(data, day, q, plan, cfg.forecast))
            for variant in VARIANTS:
                pm = fit_path_model(_variant_rows(rows, variant, fs.base_mask), cfg.forecast)
                if not all(m.converged for m in pm.models):
                    log.warning("%s q%d %s: solver hit its iteration cap", day, q, variant)
                for name, arr in path_model_arrays(pm).items():
                    arrays[f"q{q:02d}.{variant}.{name}"] = arr
                n_models += 1
        _save_npz(_path(out, f"models/{_day_tag(day)}.npz"), arrays)
        log.info("fitted %s (%d quarters)", day, len(quarters))
    return _finish(cfg, out, "fit", ["models"], {"path_models": n_models})


def load_day_models(out, day):
    return _load_npz(_path(out, f"models/{_day_tag(day)}.npz"), "models")


def path_models_for(day_arrays, day, quarter, rows, mask):
    """Rebuild the base and full path models of one quarter from a day's model arrays."""
    models = {}
    for variant in VARIANTS:
        prefix = f"q{quarter:02d}.{variant}."
        arrays = {k[len(prefix):]: v for k, v in day_arrays.items() if k.startswith(prefix)}
        if not arrays:
            raise MissingArtifact(f"models/{_day_tag(day)}.npz[q{quarter}]", "fit")
        models[variant] = path_model_from_arrays(arrays, _variant_rows(rows, variant, mask))
    return models


# ---------------------------------------------------------------------------
# forecast


def _provenance(keys):
    return tuple(f"{d.isoformat()} q{q}" for d, q in keys)


def delivery_ensembles(cfg, fs, models, rows, key):
    """Point forecast, raw ensembles and SVS weights for one delivery."""
    x, price, m = fs.forecast_row(key)
    base, full = models["base"], models["full"]
    point = base.predict_paths(x[fs.base_mask][None, :], [price], [price])[0]
    prov = _provenance(rows.keys)
    out = {"point": point, "origin_price": price, "m": m}
    kinds = cfg.ensembles.kinds
    if "historical" in kinds:
        resid = rows.Y - base.in_sample_diffs()
        out["historical"] = historical_ensemble(point, resid, prov)
    if "fundamental" in kinds:
        X = np.tile(x, (len(rows), 1))
        scen = ~fs.base_mask
        X[:, scen] = rows.X[:, scen]
        out["fundamental"] = fundamental_ensemble_from_rows(full, X, price, price, key, prov)
    if "naive" in kinds:
        inc = np.diff(np.hstack([np.zeros((len(rows), 1)), rows.Y]), axis=1)
        rng = stream(cfg.seed, "naive", key[0].isoformat(), key[1])
        out["naive"] = naive_ensemble(inc, price, cfg.ensembles.naive_draws, rng, key)
    for kind, variant in KIND_MODEL.items():
        if kind in kinds:
            out[f"{kind}.svs_weights"] = svs_weights(models[variant].models, np.arange(len(rows))).scenario_weights
    return out


def svs_count(cfg, ensemble, weights):
    e = cfg.ensembles
    if ensemble.size < e.svs_minimum:
        return ensemble.size
    return svs_stop_count(ensemble.paths, rank_order(weights), e.omega, e.ma_window, e.svs_minimum, e.svs_pooled)


def _pack_day(cfg, results, quarters):
    """Concatenate per-quarter results into flat arrays with offsets."""
    arrays = {
        "quarter": np.array(quarters, dtype=np.int64),
        "point": np.array([results[q]["point"] for q in quarters]),
        "origin_price": np.array([results[q]["origin_price"] for q in quarters]),
        "m": np.array([results[q]["m"] for q in quarters], dtype=np.int64),
    }
    for kind in ("historical", "fundamental"):
        if kind not in cfg.ensembles.kinds:
            continue
        ens = [results[q][kind] for q in quarters]
        arrays[f"{kind}.offsets"] = np.concatenate([[0], np.cumsum([e.size for e in ens])]).astype(np.int64)
        arrays[f"{kind}.paths"] = np.vstack([e.paths for e in ens])
        arrays[f"{kind}.provenance"] = np.array([p for e in ens for p in e.provenance], dtype=str)
        arrays[f"{kind}.svs_weights"] = np.concatenate([results[q][f"{kind}.svs_weights"] for q in quarters])
        arrays[f"{kind}.svs_count"] = np.array([results[q][f"{kind}.svs_count"] for q in quarters], dtype=np.int64)
    if "naive" in cfg.ensembles.kinds:
        uniq_paths, inverse, offsets, draws = [], [], [0], []
        for q in quarters:
            e = results[q]["naive"]
            src = np.array([int(p.rsplit(":", 1)[1]) for p in e.provenance], dtype=np.int64)
            u, first, inv = np.unique(src, return_index=True, return_inverse=True)
            uniq_paths.append(e.paths[first])
            inverse.append(inv)
            draws.append(src)
            offsets.append(offsets[-1] + u.size)
        arrays["naive.offsets"] = np.array(offsets, dtype=np.int64)
        arrays["naive.unique_paths"] = np.vstack(uniq_paths)
        arrays["naive.inverse"] = np.vstack(inverse).astype(np.int64)
        arrays["naive.draws"] = np.vstack(draws)
    return arrays


def _band_rows(cfg, day, arrays, quarters):
    rows = []
    scp = cfg.strategies.scp
    sets = day_ensembles(arrays, cfg, day)
    for qi, q in enumerate(quarters):
        point = arrays["point"][qi]
        for name in cfg.strategies.ensembles:
            e = sets[name][qi]
            med = empirical_median_path(e)
            lo = build_band(e, scp, "lower").values
            up = build_band(e, scp, "upper").values
            for u in range(e.horizon):
                rows.append([q, name, u + 1, _fmt(point[u]), _fmt(lo[u]), _fmt(med[u]), _fmt(up[u]), scp])
    return rows


def cmd_forecast(cfg, out):
    data = load_store(_path(out, STORE))
    plan = test_plan(data.days, cfg.window)
    fs = load_features(out)
    n_cells = 0
    for day in plan.test_days():
        quarters = sorted(q for d, q in fs.fkeys if d == day)
        day_models = load_day_models(out, day)
        results = {}
        for q in quarters:
            rows = fs.rows(training_keys(data, day, q, plan, cfg.forecast))
            models = path_models_for(day_models, day, q, rows, fs.base_mask)
            res = delivery_ensembles(cfg, fs, models, rows, (day, q))
            for kind in KIND_MODEL:
                if kind in res:
                    res[f"{kind}.svs_count"] = svs_count(cfg, res[kind], res[f"{kind}.svs_weights"])
            results[q] = res
            n_cells += 1
        arrays = _pack_day(cfg, results, quarters)
        _save_npz(_path(out, f"ensembles/{_day_tag(day)}.npz"), arrays)
        header = ["quarter", "ensemble", "step", "point", "lower", "median", "upper", "scp"]
        _write_csv_rows(_path(out, f"ensembles/{_day_tag(day)}.bands.csv"), header, _band_rows(cfg, day, arrays, quarters))
        log.info("forecast %s (%d quarters)", day, len(quarters))
    return _finish(cfg, out, "forecast", ["ensembles"], {"cells": n_cells})


def day_ensembles(arrays, cfg, day):
    """``{ensemble set: [ScenarioEnsemble per quarter]}`` rebuilt from a day's arrays."""
    quarters = [int(q) for q in arrays["quarter"]]
    sets = {}
    for kind in ("historical", "fundamental"):
        if f"{kind}.paths" not in arrays:
            continue
        off = arrays[f"{kind}.offsets"]
        full, reduced = [], []
        for qi, q in enumerate(quarters):
            sl = slice(int(off[qi]), int(off[qi + 1]))
            paths = arrays[f"{kind}.paths"][sl]
            prov = tuple(str(p) for p in arrays[f"{kind}.provenance"][sl])
            e = ScenarioEnsemble((day, q), paths, np.full(paths.shape[0], 1.0 / paths.shape[0]), prov, kind)
            full.append(e)
            k = int(arrays[f"{kind}.svs_count"][qi])
            order = rank_order(arrays[f"{kind}.svs_weights"][sl])
            reduced.append(e.subset(order[:k]))
        sets[kind] = full
        sets[f"{kind}_svs"] = reduced
    if "naive.unique_paths" in arrays:
        off = arrays["naive.offsets"]
        ens = []
        for qi, q in enumerate(quarters):
            uniq = arrays["naive.unique_paths"][int(off[qi]) : int(off[qi + 1])]
            draws = arrays["naive.draws"][qi]
            paths = uniq[arrays["naive.inverse"][qi]]
            prov = tuple(f"naive draw {k}: {int(d)}" for k, d in enumerate(draws))
            ens.append(ScenarioEnsemble((day, q), paths, np.full(paths.shape[0], 1.0 / paths.shape[0]), prov, "naive"))
        sets["naive"] = ens
    return sets


def load_day_ensembles(cfg, out, day):
    arrays = _load_npz(_path(out, f"ensembles/{_day_tag(day)}.npz"), "ensembles")
    return arrays, day_ensembles(arrays, cfg, day)


def realized_path(data, day, quarter, m, horizon):
    prices = data.grid(day, quarter).prices
    return np.asarray(prices[m + 1 : m + horizon + 1], dtype=float)


# ---------------------------------------------------------------------------
# backtest


def strategy_specs(cfg):
    s = cfg.strategies
    specs = []
    for agent in s.agents:
        for fam in s.families:
            family, attitude = FAMILY_CHOICES[fam]
            for dyn in s.dynamics:
                specs.append(StrategySpec(agent, family, attitude, dyn, s.scp, cfg.reweight(), s.threshold))
    return specs


def _deliveries(cfg, out, data, days, sets_wanted):
    """Yield ``(day, quarter, realized, {set: ensemble})`` for the given days."""
    H = cfg.forecast.horizon
    for day in days:
        arrays, sets = load_day_ensembles(cfg, out, day)
        for qi, q in enumerate(int(v) for v in arrays["quarter"]):
            realized = realized_path(data, day, q, int(arrays["m"][qi]), H)
            yield day, q, realized, {name: sets[name][qi] for name in sets_wanted}


def cmd_backtest(cfg, out):
    data = load_store(_path(out, STORE))
    plan = test_plan(data.days, cfg.window)
    specs = strategy_specs(cfg)
    sets_wanted = cfg.strategies.ensembles
    trades = {(e, s.name): [] for e in sets_wanted for s in specs}
    audits = {(e, s.name): [] for e in sets_wanted for s in specs}
    bench = {}
    for day, q, realized, ens in _deliveries(cfg, out, data, plan.test_days(), sets_wanted):
        for agent in cfg.strategies.agents:
            for label, outcome in (
                ("crystal_ball", crystal_ball(agent, realized)),
                ("naive_first", naive_endpoints(agent, "first", realized)),
                ("naive_last", naive_endpoints(agent, "last", realized)),
            ):
                bench.setdefault(f"{agent}-{label}", []).append([day.isoformat(), q, *outcome.ledger_fields()])
        for name, e in ens.items():
            cache = CurveCache(e, realized)
            for spec in specs:
                o = simulate_strategy(spec, e, realized, cache)
                trades[(name, spec.name)].append([day.isoformat(), q, *o.ledger_fields()])
                for a in o.audit:
                    audits[(name, spec.name)].append(
                        [day.isoformat(), q, a.tau, a.action, a.reason, ";".join(_fmt(v) for v in a.values)]
                    )
        log.debug("backtested %s q%d", day, q)
    header = ["day", "quarter", "actions", "prices", "profit"]
    summary = []
    for (name, spec_name), rows in trades.items():
        _write_csv_rows(_path(out, f"backtest/{name}/{spec_name}/trades.csv"), header, rows)
        _write_csv_rows(
            _path(out, f"backtest/{name}/{spec_name}/audit.csv"),
            ["day", "quarter", "tau", "action", "reason", "values"],
            audits[(name, spec_name)],
        )
        agent = spec_name.split("-", 1)[0]
        summary.append([name, spec_name, *_scores([float(r[-1]) for r in rows], agent)])
    for label, rows in sorted(bench.items()):
        _write_csv_rows(_path(out, f"backtest/benchmarks/{label}.csv"), header, rows)
        summary.append(["benchmark", label, *_scores([float(r[-1]) for r in rows], label.split("-", 1)[0])])
    _write_csv_rows(_path(out, "backtest/summary.csv"), ["ensemble", "strategy", "total_profit", "downside", "sortino"], summary)
    return _finish(cfg, out, "backtest", ["backtest"], {"strategies": len(specs), "ensemble_sets": list(sets_wanted)})


def _scores(pnl, agent):
    total, risk, score = metrics.trading_scores(pnl, agent)
    return _fmt(total), _fmt(risk), _fmt(score)


# ---------------------------------------------------------------------------
# grid search


def _grid_template(name, grid_kind):
    try:
        agent, fam = name.split("-", 1)
        family, attitude = FAMILY_CHOICES[fam]
    except (ValueError, KeyError):
        raise ConfigError(f"[gridsearch] strategies: cannot parse {name!r} (agent-family)") from None
    if (grid_kind == "median") != (family == "median"):
        raise ConfigError(f"[gridsearch] strategies: {name!r} does not match grid {grid_kind!r}")
    return StrategySpec(agent, family, attitude, "dynamic_kernel")


def search_grid(cfg):
    g = cfg.gridsearch
    grid = dict(MEDIAN_GRID if g.grid == "median" else BAND_GRID)
    for key, override in (("scp", g.scp), ("p", g.p), ("lam", g.lam), ("threshold_method", g.threshold)):
        if override:
            grid[key] = tuple(override)
    return grid


def cmd_gridsearch(cfg, out):
    g = cfg.gridsearch
    data = load_store(_path(out, STORE))
    plan = test_plan(data.days, cfg.window)
    days = plan.test_days()[: g.calibration_days]
    deliveries = [(ens[g.ensemble], realized) for _, _, realized, ens in _deliveries(cfg, out, data, days, (g.ensemble,))]
    caches = [CurveCache(e, r) for e, r in deliveries]
    grid = search_grid(cfg)
    best_all = {}
    for name in g.strategies:
        template = _grid_template(name, g.grid)
        cells = grid_cells(template, grid)
        best, rows = grid_search(cells, deliveries, g.maximize, caches)
        keys = ["scp", "p", "lam", "threshold_method", "total_profit", "downside", "sortino"]
        table = [[r[k] if isinstance(r[k], str) else _fmt(r[k]) for k in keys] for r in rows]
        _write_csv_rows(_path(out, f"gridsearch/{name}.csv"), keys, table)
        best_all[name] = {k: (v if isinstance(v, str) else float(v)) for k, v in best.parameters().items()}
        log.info("grid search %s: %d cells, best %s", name, len(cells), best_all[name])
    artifacts.write_json(_path(out, "gridsearch/best.json"), {"ensemble": g.ensemble, "maximize": g.maximize, "best": best_all})
    return _finish(cfg, out, "gridsearch", ["gridsearch"], {"deliveries": len(deliveries)})


# ---------------------------------------------------------------------------
# report


def _read_csv(path, kind):
    require(path, kind)
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _json_num(x):
    return metrics._json_float(float(x))


def cmd_report(cfg, out):
    data = load_store(_path(out, STORE))
    plan = test_plan(data.days, cfg.window)
    summary = _read_csv(_path(out, "backtest/summary.csv"), "backtest")
    sets_wanted = cfg.strategies.ensembles
    H = cfg.forecast.horizon
    per_level = {name: [] for name in sets_wanted}
    point_err, median_err = [], {name: [] for name in sets_wanted}
    counts = {name: [] for name in sets_wanted}
    first = None
    for day, q, realized, ens in _deliveries(cfg, out, data, plan.test_days(), sets_wanted):
        for name, e in ens.items():
            per_level[name].append(metrics.pinball_by_level(e.paths, realized, e.weights))
            median_err[name].append(np.abs(empirical_median_path(e) - realized))
            counts[name].append(e.size)
        if first is None:
            first = (day, q, realized, ens)
    # point forecasts are stored per day
    for day in plan.test_days():
        arrays = _load_npz(_path(out, f"ensembles/{_day_tag(day)}.npz"), "ensembles")
        for qi, q in enumerate(int(v) for v in arrays["quarter"]):
            realized = realized_path(data, day, q, int(arrays["m"][qi]), H)
            point_err.append(np.abs(arrays["point"][qi] - realized))

    levels = {name: np.mean(v, axis=0) for name, v in per_level.items()}
    _write_csv_rows(
        _path(out, "report/pinball.csv"),
        ["alpha", *sets_wanted],
        [[f"{a:.2f}", *(_fmt(levels[n][i]) for n in sets_wanted)] for i, a in enumerate(metrics.QUANTILE_GRID)],
    )
    forecast = {}
    for name in sets_wanted:
        rep = metrics.EvalReport(
            mae=float(np.mean(median_err[name])),
            crps=float(levels[name].mean()),
            per_quantile_pinball=list(levels[name]),
            counts=_count_stats(counts[name]),
        )
        d = rep.to_dict()
        del d["total_profit"], d["downside"], d["sortino"]
        forecast[name] = d
    trading = {}
    for row in summary:
        trading.setdefault(row["ensemble"], {})[row["strategy"]] = {
            k: _json_num(row[k]) for k in ("total_profit", "downside", "sortino")
        }
    report = {
        "config_hash": cfg.config_hash(),
        "deliveries": len(point_err),
        "point_forecast_mae": float(np.mean(point_err)),
        "forecast": forecast,
        "trading": trading,
    }
    artifacts.write_json(_path(out, "report/metrics.json"), report)
    _write_csv_rows(
        _path(out, "report/scenario_counts.csv"),
        ["ensemble", "count", "deliveries"],
        [[name, c, n] for name in sets_wanted for c, n in zip(*np.unique(counts[name], return_counts=True))],
    )
    _plot_data(cfg, out, first)
    return _finish(cfg, out, "report", ["report"])


def _count_stats(counts):
    c = np.asarray(counts, dtype=float)
    return {"mean": float(c.mean()), "min": int(c.min()), "median": float(np.median(c)), "max": int(c.max())}


def _plot_data(cfg, out, first):
    """Trajectory and band plot data for the first delivery of the test window."""
    day, q, realized, ens = first
    scp = cfg.strategies.scp
    traj, band = [], []
    for name, e in ens.items():
        lo = build_band(e, scp, "lower").values
        up = build_band(e, scp, "upper").values
        med = empirical_median_path(e)
        for u in range(e.horizon):
            band.append([day.isoformat(), q, name, u + 1, _fmt(realized[u]), _fmt(lo[u]), _fmt(med[u]), _fmt(up[u])])
        for k in range(e.size):
            traj.append([day.isoformat(), q, name, k, _fmt(e.weights[k]), *(_fmt(v) for v in e.paths[k])])
    steps = [f"p{u}" for u in range(1, len(realized) + 1)]
    _write_csv_rows(_path(out, "report/bands.csv"), ["day", "quarter", "ensemble", "step", "realized", "lower", "median", "upper"], band)
    _write_csv_rows(
        _path(out, "report/trajectories.csv"),
        ["day", "quarter", "ensemble", "scenario", "weight", *steps],
        [[day.isoformat(), q, "realized", -1, _fmt(1.0), *(_fmt(v) for v in realized)], *traj],
    )


# ---------------------------------------------------------------------------

COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "backtest": cmd_backtest,
    "gridsearch": cmd_gridsearch,
    "report": cmd_report,
}
PIPELINE = ("synth", "ingest", "fit", "forecast", "backtest", "report")


def run_command(name, cfg, out):
    os.makedirs(out, exist_ok=True)
    return COMMANDS[name](cfg, out)


def run_pipeline(cfg, out, commands=PIPELINE):
    return {name: run_command(name, cfg, out) for name in commands}


def manifest_digest(out, command):
    with open(os.path.join(out, "manifests", f"{command}.json")) as fh:
        return json.load(fh)["digest"]
