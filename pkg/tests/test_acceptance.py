"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the terminal summary (see ``conftest.py``).  The
end-to-end scale check is marked ``slow``; deselect it with ``-m "not slow"``.
"""

import csv
import math
import os
import tempfile
import time
from statistics import NormalDist

import numpy as np
import pytest

from intrapath._accel import backend_name
from intrapath.bands import ReweightParams, build_band, inverse_mae_weights, kernel_weights, weighted_median_path
from intrapath.config import load_config
from intrapath.ensembles import (
    ScenarioEnsemble,
    historical_ensemble,
    rank_order,
    svs_stop_count,
    svs_weights,
    wasserstein1,
)
from intrapath.metrics import QUANTILE_GRID, crps_cell
from intrapath.path_forecast import ForecastConfig, TrainingRows, fit_multi_output
from intrapath.svr import KernelParams, SvrHyperParams, dual_objective, fit_kernel_widths, gram_matrix, solve_dual

from .conftest import ROOT
from .golden import COMMANDS, config_path, load_golden
from .oracles import pinball_direct, svr_dual_oracle, wasserstein_lp

RESULTS = []


def record(number, title, ok, detail):
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})")
    assert ok, detail


def uniform(paths):
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    n = paths.shape[0]
    return ScenarioEnsemble(None, paths, np.full(n, 1.0 / n), tuple(range(n)), "historical")


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_01_dual_solver_matches_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_obj = worst_pred = 0.0
    n_cases = 0
    for C in (0.1, 1.0, 10.0):
        for eps in (0.0, 0.1):
            for _ in range(34):
                n = int(rng.integers(1, 9))
                X = rng.normal(size=(n, 3))
                A = rng.normal(size=(n, 1))
                K = gram_matrix(X, A, KernelParams(rng.uniform(0.2, 2.0), rng.uniform(0.1, 2.0)))
                y = rng.normal(size=n)
                m = solve_dual(K, y, SvrHyperParams(C, eps, 1e-10))
                beta = m.alpha_star - m.alpha
                ref_beta, ref_obj, ref_b = svr_dual_oracle(K, y, C, eps)
                worst_obj = max(worst_obj, abs(dual_objective(K, y, beta, eps) - ref_obj))
                worst_pred = max(worst_pred, float(np.max(np.abs(K @ beta + m.bias - (K @ ref_beta + ref_b)))))
                n_cases += 1
    elapsed = time.perf_counter() - start
    ok = n_cases >= 200 and worst_obj <= 1e-6 and worst_pred <= 1e-4 and elapsed < 60
    record(1, "dual solver vs brute-force QP", ok, f"{n_cases} cases, max |dobj| {worst_obj:.1e}, max |dpred| {worst_pred:.1e}, {elapsed:.1f} s")


def test_02_kernel_width_closed_forms():
    p = fit_kernel_widths(np.ones(20), np.ones(20), ((0.75, 0.5), (0.75, 0.75)))
    z = NormalDist().inv_cdf(0.75)
    dl, dg = abs(p.l - math.log(2)), abs(p.g - z * z / 2)
    record(2, "kernel width closed forms", dl <= 1e-9 and dg <= 1e-9, f"|dl| {dl:.1e}, |dg| {dg:.1e}")


def test_03_wasserstein_oracle_and_axioms():
    rng = np.random.default_rng(7)
    worst_lp = worst_ax = 0.0
    for _ in range(120):
        na, nb, nc = rng.integers(1, 11, size=3)
        xa, xb, xc = rng.normal(size=na), rng.normal(size=nb), rng.normal(size=nc)
        wa, wb, wc = rng.dirichlet(np.ones(na)), rng.dirichlet(np.ones(nb)), rng.dirichlet(np.ones(nc))
        d_ab = wasserstein1(xa, xb, wa, wb)
        worst_lp = max(worst_lp, abs(d_ab - wasserstein_lp(xa, wa, xb, wb)))
        d_ba = wasserstein1(xb, xa, wb, wa)
        d_ac, d_bc = wasserstein1(xa, xc, wa, wc), wasserstein1(xb, xc, wb, wc)
        worst_ax = max(worst_ax, abs(wasserstein1(xa, xa, wa, wa)), abs(d_ab - d_ba), d_ac - (d_ab + d_bc))
    ok = worst_lp <= 1e-9 and worst_ax <= 1e-12
    record(3, "Wasserstein vs transport LP", ok, f"120 pairs, max |dLP| {worst_lp:.1e}, axiom slack {worst_ax:.1e}")


def test_04_band_coverage():
    rng = np.random.default_rng(11)
    failures = []
    for n in (10, 20, 100):
        paths = rng.normal(size=(n, 31)).cumsum(axis=1)
        e = uniform(paths)
        for scp in (0.05, 0.5, 0.95):
            band = build_band(e, scp, "upper")
            k = math.ceil(round(scp * n, 9))
            below = float(np.mean(np.all(paths <= band.values, axis=1)))
            integral = abs(scp * n - round(scp * n)) < 1e-9
            if band.retained_indices.size != k or below < scp - 1e-12 or (integral and abs(below - k / n) > 1e-12):
                failures.append((n, scp, band.retained_indices.size, below))
    record(4, "band coverage", not failures, "9 (n, scp) cells" if not failures else f"failures {failures}")


def test_05_svs_stopping():
    rng = np.random.default_rng(5)
    paths = rng.normal(size=(60, 31))
    order = np.arange(60)
    at_inf = svs_stop_count(paths, order, math.inf, 10, 10)
    at_zero = svs_stop_count(paths, order, 0.0, 10, 10)
    n, H = 500, 31
    X = rng.normal(size=(n, 4))
    loadings = rng.normal(size=(2, H)).cumsum(axis=1)
    Y = X[:, :2] @ loadings + 0.3 * rng.normal(size=(n, H))
    pm = fit_multi_output(TrainingRows(tuple(range(n)), X, 50 + rng.normal(size=n), Y), ForecastConfig(horizon=H))
    ranking = svs_weights(pm.models, np.arange(n))
    e = historical_ensemble(np.zeros(H), pm.in_sample_diffs())
    selected = svs_stop_count(e.paths, rank_order(ranking.scenario_weights), 0.01, 10, 10)
    ok = at_inf == 10 and at_zero == 60 and selected < 150
    record(5, "SVS stopping", ok, f"omega=inf -> {at_inf}, omega=0 -> {at_zero}/60, low-rank 500 -> {selected}")


def test_06_dominance_and_antisymmetry(small_run):
    cfg, out, _ = small_run
    bt = os.path.join(out, "backtest")
    crystal = {}
    for agent in cfg.strategies.agents:
        for r in read_rows(os.path.join(bt, "benchmarks", f"{agent}-crystal_ball.csv")):
            crystal[(agent, r["day"], r["quarter"])] = float(r["profit"])
    checked = violations = 0
    for ens in cfg.strategies.ensembles:
        for spec in os.listdir(os.path.join(bt, ens)):
            agent = spec.split("-", 1)[0]
            for r in read_rows(os.path.join(bt, ens, spec, "trades.csv")):
                checked += 1
                violations += float(r["profit"]) > crystal[(agent, r["day"], r["quarter"])]
    summary = {(r["ensemble"], r["strategy"]): r for r in read_rows(os.path.join(bt, "summary.csv"))}
    cb_down = float(summary[("benchmark", "spread-crystal_ball")]["downside"])
    first = float(summary[("benchmark", "spread-naive_first")]["total_profit"])
    last = float(summary[("benchmark", "spread-naive_last")]["total_profit"])
    ok = violations == 0 and cb_down == 0.0 and first == -last
    record(6, "crystal-ball dominance and naive antisymmetry", ok, f"{checked} trades, {violations} violations, spread cb downside {cb_down}, naive totals {first:.4f}/{last:.4f}")


def test_07_infinite_threshold_matches_static():
    from intrapath.pipeline import run_pipeline

    cfg = load_config(os.path.join(ROOT, "configs", "noop.ini"))
    with tempfile.TemporaryDirectory() as out:
        run_pipeline(cfg, out, ("synth", "ingest", "fit", "forecast", "backtest"))
        pairs = mismatched = 0
        for ens in cfg.strategies.ensembles:
            root = os.path.join(out, "backtest", ens)
            for spec in sorted(os.listdir(root)):
                if not spec.endswith("-static"):
                    continue
                with open(os.path.join(root, spec, "trades.csv"), "rb") as fh:
                    static = fh.read()
                for dyn in ("dynamic_kernel", "dynamic_mae"):
                    with open(os.path.join(root, spec[: -len("static")] + dyn, "trades.csv"), "rb") as fh:
                        pairs += 1
                        mismatched += fh.read() != static
    ok = pairs == 60 and mismatched == 0 and cfg.window.test_days == 30
    record(7, "eta=inf dynamic ledgers equal static", ok, f"{cfg.window.test_days} test days, {pairs} ledger pairs, {mismatched} differ")


def test_08_reweighting_sanity():
    rng = np.random.default_rng(8)
    paths = 50 + rng.normal(size=(40, 31)).cumsum(axis=1)
    j = 17
    realized = paths[j].copy()
    e = uniform(paths)
    med0 = np.median(paths, axis=0)
    bad = []
    for tau in range(1, 31):
        w = inverse_mae_weights(realized[:tau], e)
        if w[j] != 1.0 or not np.array_equal(weighted_median_path(e, w, tau), paths[j, tau:]):
            bad.append(("mae", tau))
        for p in (0.25, 0.5, 1.0, 1.5, 2.0, 3.0):
            for lam in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
                kw = kernel_weights(realized[:tau], e, med0, ReweightParams(p, lam))
                if int(np.argmax(kw)) != j or np.sum(kw == kw[j]) != 1:
                    bad.append(("kernel", tau, p, lam))
    record(8, "reweighting sanity", not bad, "30 update steps x 36 (p, lambda) cells" if not bad else f"failures {bad[:5]}")


def test_10_crps_reductions(small_run):
    rng = np.random.default_rng(10)
    worst = 0.0
    for d in (-5.0, -0.3, 0.0, 1.7, 12.0):
        realized = rng.normal(size=31)
        crps = crps_cell(np.tile(realized + d, (3, 1)), realized)
        closed = sum(pinball_direct(0.0, d, a) for a in QUANTILE_GRID) / len(QUANTILE_GRID)
        worst = max(worst, abs(crps - closed))
    _, out, _ = small_run
    rows = read_rows(os.path.join(out, "report", "pinball.csv"))
    grid_ok = len(rows) == 99 and [r["alpha"] for r in rows] == [f"{a:.2f}" for a in QUANTILE_GRID]
    record(10, "CRPS reductions and pinball grid", worst <= 1e-12 and grid_ok, f"max |dCRPS| {worst:.1e}, pinball.csv rows {len(rows)}")


@pytest.mark.slow
def test_09_full_pipeline_scale_and_golden():
    from intrapath.pipeline import run_pipeline

    cfg = load_config(config_path("full"))
    golden = load_golden("full")
    with tempfile.TemporaryDirectory() as out:
        start = time.perf_counter()
        manifests = run_pipeline(cfg, out, COMMANDS["full"])
        elapsed = time.perf_counter() - start
    digests = {c: m["digest"] for c, m in manifests.items()}
    shape = f"{cfg.synth.n_days} days x {cfg.synth.deliveries_per_day} deliveries, H={cfg.forecast.horizon}"
    if golden is None:
        record(9, "full pipeline scale and golden checksums", False, f"no golden digests for backend {backend_name()}")
    match = digests == golden["digests"]
    bt = manifests["backtest"]
    coverage = len(bt["ensemble_sets"]) == 5 and bt["strategies"] == 18
    ok = elapsed < 15 * 60 and match and coverage and cfg.synth.n_days == 60 and cfg.synth.deliveries_per_day == 96
    detail = f"{shape}, {bt['strategies']} specs x {len(bt['ensemble_sets'])} sets, {elapsed / 60:.1f} min on backend {backend_name()}"
    record(9, "full pipeline scale and golden checksums", ok, f"{detail}, golden {'match' if match else 'MISMATCH'}")
