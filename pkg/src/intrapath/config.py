"""Run configuration read from an INI file with sections.

Every key has a default; unknown sections or keys are validation errors so
typos do not pass silently.  Relative data paths resolve against the output
directory.
"""

import configparser
import datetime as dt
import hashlib
from dataclasses import dataclass, field, fields, replace

from .bands import ReweightParams
from .market_data import SyntheticMarketConfig
from .path_forecast import ForecastConfig
from .strategies import AGENTS, DYNAMICS, THRESHOLDS
from .svr import SvrHyperParams


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


ENSEMBLE_SETS = ("naive", "historical", "fundamental", "historical_svs", "fundamental_svs")
FAMILY_CHOICES = {"median": ("median", "none"), "band_averse": ("band", "risk_averse"), "band_seeking": ("band", "risk_seeking")}


def _floats(text):
    return tuple(float(x) for x in _words(text))


def _words(text):
    return tuple(w.strip() for w in text.replace("\n", ",").split(",") if w.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class DataPaths:
    transactions: str = "data/transactions.csv"
    auction_prices: str = "data/auction_prices.csv"
    fundamentals: str = "data/fundamentals.csv"


@dataclass(frozen=True)
class WindowConfig:
    initial_train_days: int = 30
    test_days: int = 30


@dataclass(frozen=True)
class EnsembleConfig:
    kinds: tuple = ("historical", "fundamental", "naive")
    omega: float = 0.01
    svs_minimum: int = 10
    ma_window: int = 10
    naive_draws: int = 1000
    svs_pooled: bool = True


@dataclass(frozen=True)
class StrategyConfig:
    agents: tuple = ("seller", "spread")
    families: tuple = ("median", "band_averse", "band_seeking")
    dynamics: tuple = ("static", "dynamic_kernel", "dynamic_mae")
    ensembles: tuple = ENSEMBLE_SETS
    scp: float = 0.5
    p: float = 0.5
    lam: float = 0.35
    threshold: str = "iqr"


@dataclass(frozen=True)
class GridConfig:
    grid: str = "median"  # median | band
    strategies: tuple = ("seller-median", "spread-median")
    ensemble: str = "historical"
    calibration_days: int = 5
    maximize: bool = True
    scp: tuple = ()
    p: tuple = ()
    lam: tuple = ()
    threshold: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    synth: SyntheticMarketConfig = SyntheticMarketConfig()
    data: DataPaths = DataPaths()
    window: WindowConfig = WindowConfig()
    forecast: ForecastConfig = ForecastConfig()
    ensembles: EnsembleConfig = EnsembleConfig()
    strategies: StrategyConfig = StrategyConfig()
    gridsearch: GridConfig = GridConfig()
    source_text: str = field(default="", compare=False, repr=False)

    def canonical(self):
        """Stable text form used for the config hash."""
        return repr(
            (self.seed, self.synth, self.data, self.window, self.forecast, self.ensembles, self.strategies, self.gridsearch)
        )

    def config_hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def reweight(self):
        return ReweightParams(self.strategies.p, self.strategies.lam)


# ---------------------------------------------------------------------------
# parsing


def _convert(section, key, raw, default):
    try:
        if isinstance(default, bool):
            return _bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, dt.date):
            return dt.date.fromisoformat(raw.strip())
        if isinstance(default, tuple):
            if default and isinstance(default[0], tuple):
                return tuple((n.strip(), float(e)) for n, e in (w.split(":") for w in _words(raw)))
            if default and isinstance(default[0], float):
                return _floats(raw)
            return _words(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


# list-valued keys whose default is empty, so the type cannot be inferred
_FLOAT_LISTS = {(GridConfig, "scp"), (GridConfig, "p"), (GridConfig, "lam")}


def _section(parser, name, cls, base):
    if not parser.has_section(name):
        return base
    names = {f.name for f in fields(cls)}
    kw = {}
    for attr, raw in parser.items(name):
        key = attr
        if attr not in names:
            raise ConfigError(f"[{name}] {key}: unknown key")
        default = (0.0,) if (cls, attr) in _FLOAT_LISTS else getattr(base, attr)
        kw[attr] = _convert(name, key, raw, default)
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


KNOWN_SECTIONS = ("run", "synth", "data", "window", "forecast", "ensembles", "strategies", "gridsearch")


def parse_config(text, seed=None):
    """Parse INI text; ``seed`` overrides ``[run] seed`` (and the synthetic market seed)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for sec in parser.sections():
        if sec not in KNOWN_SECTIONS:
            raise ConfigError(f"[{sec}]: unknown section")
    cfg = RunConfig(source_text=text)
    run = dict(parser.items("run")) if parser.has_section("run") else {}
    for key in run:
        if key not in ("seed", "threads"):
            raise ConfigError(f"[run] {key}: unknown key")
    if seed is None:
        if "seed" not in run:
            raise ConfigError("[run] seed: required")
        seed = _convert("run", "seed", run["seed"], 0)
    threads = _convert("run", "threads", run.get("threads", "1"), 1)
    synth = _section(parser, "synth", SyntheticMarketConfig, SyntheticMarketConfig(rng_seed=seed))
    forecast = _forecast_section(parser)
    cfg = replace(
        cfg,
        seed=seed,
        threads=threads,
        synth=synth,
        data=_section(parser, "data", DataPaths, DataPaths()),
        window=_section(parser, "window", WindowConfig, WindowConfig()),
        forecast=forecast,
        ensembles=_section(parser, "ensembles", EnsembleConfig, EnsembleConfig()),
        strategies=_section(parser, "strategies", StrategyConfig, StrategyConfig()),
        gridsearch=_section(parser, "gridsearch", GridConfig, GridConfig()),
    )
    validate(cfg)
    return cfg


def _forecast_section(parser):
    if not parser.has_section("forecast"):
        return ForecastConfig()
    items = dict(parser.items("forecast"))
    hyper_keys = {"c": "C", "epsilon": "epsilon", "solver_tolerance": "solver_tolerance"}
    hyper_kw = {}
    for key in list(items):
        if key in hyper_keys:
            hyper_kw[hyper_keys[key]] = _convert("forecast", key, items.pop(key), 1.0)
    base = ForecastConfig()
    names = {f.name for f in fields(ForecastConfig)} - {"hyper", "laplace_levels", "gauss_levels"}
    kw = {}
    for key, raw in items.items():
        if key not in names:
            raise ConfigError(f"[forecast] {key}: unknown key")
        kw[key] = _convert("forecast", key, raw, getattr(base, key))
    try:
        return replace(base, hyper=SvrHyperParams(**hyper_kw), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[forecast] {exc}") from None


def validate(cfg):
    for k in cfg.ensembles.kinds:
        if k not in ("historical", "fundamental", "naive"):
            raise ConfigError(f"[ensembles] kinds: unknown kind {k!r}")
    for k in cfg.strategies.ensembles:
        if k not in ENSEMBLE_SETS:
            raise ConfigError(f"[strategies] ensembles: unknown ensemble {k!r}")
        base = k.replace("_svs", "")
        if base not in cfg.ensembles.kinds:
            raise ConfigError(f"[strategies] ensembles: {k!r} needs kind {base!r} in [ensembles] kinds")
    for f in cfg.strategies.families:
        if f not in FAMILY_CHOICES:
            raise ConfigError(f"[strategies] families: unknown family {f!r}")
    for sec, key, values, allowed in (
        ("strategies", "agents", cfg.strategies.agents, AGENTS),
        ("strategies", "dynamics", cfg.strategies.dynamics, DYNAMICS),
        ("strategies", "threshold", (cfg.strategies.threshold,), THRESHOLDS),
        ("gridsearch", "threshold", cfg.gridsearch.threshold, THRESHOLDS),
    ):
        for v in values:
            if v not in allowed:
                raise ConfigError(f"[{sec}] {key}: unknown value {v!r}")
    if not 0 < cfg.strategies.scp < 1:
        raise ConfigError("[strategies] scp: must lie in (0, 1)")
    if cfg.gridsearch.grid not in ("median", "band"):
        raise ConfigError("[gridsearch] grid: must be median or band")
    if cfg.gridsearch.ensemble not in ENSEMBLE_SETS:
        raise ConfigError(f"[gridsearch] ensemble: unknown ensemble {cfg.gridsearch.ensemble!r}")
    if cfg.window.initial_train_days < 2:
        raise ConfigError("[window] initial_train_days: need at least 2")
    if cfg.window.test_days < 1:
        raise ConfigError("[window] test_days: need at least 1")
    if cfg.window.initial_train_days + cfg.window.test_days > cfg.synth.n_days:
        raise ConfigError("[window] test_days: window exceeds [synth] n_days")
    if cfg.gridsearch.calibration_days > cfg.window.test_days:
        raise ConfigError("[gridsearch] calibration_days: exceeds [window] test_days")
    if cfg.threads < 1:
        raise ConfigError("[run] threads: must be >= 1")


def load_config(path, seed=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, seed)
