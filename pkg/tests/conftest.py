import os
import shutil

import numpy as np
import pytest

from intrapath.config import load_config
from intrapath.features import MarketData
from intrapath.market_data import SyntheticMarketConfig, generate_synthetic_market
from intrapath.pipeline import run_pipeline

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SMALL_CONFIG = os.path.join(ROOT, "configs", "small.ini")


@pytest.fixture(scope="session")
def small_market():
    cfg = SyntheticMarketConfig(n_days=6, deliveries_per_day=3, rng_seed=11)
    grids, series = generate_synthetic_market(cfg)
    return MarketData(grids, series, cfg.utc_offset)


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """Full pipeline on the bundled small config, run once per session."""
    out = str(tmp_path_factory.mktemp("small_run"))
    cfg = load_config(SMALL_CONFIG)
    manifests = run_pipeline(cfg, out, ("synth", "ingest", "fit", "forecast", "backtest", "gridsearch", "report"))
    return cfg, out, manifests


@pytest.fixture
def run_copy(small_run, tmp_path):
    """Writable copy of the small run for tests that modify artifacts."""
    cfg, out, _ = small_run
    dst = tmp_path / "run"
    shutil.copytree(out, dst)
    return cfg, str(dst)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
