"""Seller and spread-trader strategies: static plans, dynamic updates, benchmarks, grid search.

Path steps are 1-based (``1..H``).  A realized price ``P(tau)`` becomes known at
update step ``tau`` and any action taken at ``tau`` executes at that price.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import bands, metrics
from .bands import ReweightParams
from .ensembles import empirical_median_path

log = logging.getLogger(__name__)

AGENTS = ("seller", "spread")
FAMILIES = ("median", "band")
ATTITUDES = ("risk_averse", "risk_seeking", "none")
DYNAMICS = ("static", "dynamic_kernel", "dynamic_mae")
THRESHOLDS = ("three_sigma", "iqr", "ipr_5_95", "mae", "infinite")

MEDIAN_GRID = {
    "p": (0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0),
    "lam": tuple(round(0.05 * k, 2) for k in range(11)),
    "threshold_method": ("three_sigma", "iqr", "ipr_5_95", "mae"),
}
BAND_GRID = {
    "scp": tuple(round(0.05 * k, 2) for k in range(1, 20)),
    "p": (0.5, 0.75, 1.0, 1.25, 1.75, 2.0),
    "lam": (0.05, 0.1, 0.2, 0.35, 0.4, 0.5),
    "threshold_method": ("iqr", "ipr_5_95"),
}


@dataclass(frozen=True)
class StrategySpec:
    agent: str
    family: str = "median"
    band_attitude: str = "none"
    dynamics: str = "static"
    scp: float = 0.5
    reweight: ReweightParams = ReweightParams()
    threshold_method: str = "iqr"

    def __post_init__(self):
        for value, allowed, label in (
            (self.agent, AGENTS, "agent"),
            (self.family, FAMILIES, "family"),
            (self.band_attitude, ATTITUDES, "band_attitude"),
            (self.dynamics, DYNAMICS, "dynamics"),
            (self.threshold_method, THRESHOLDS, "threshold_method"),
        ):
            if value not in allowed:
                raise ValueError(f"{label} must be one of {allowed}, got {value!r}")
        if (self.family == "band") != (self.band_attitude != "none"):
            raise ValueError("band_attitude is required for band strategies and only for them")
        if not 0 < self.scp < 1:
            raise ValueError("scp must lie in (0, 1)")

    @property
    def name(self):
        parts = [self.agent, self.family]
        if self.family == "band":
            parts.append(self.band_attitude)
        parts.append(self.dynamics)
        return "-".join(parts)

    @property
    def downside_mode(self):
        return self.agent

    def parameters(self):
        return {"scp": self.scp, "p": self.reweight.p, "lam": self.reweight.lam, "threshold_method": self.threshold_method}


@dataclass(frozen=True)
class TradePlan:
    exit: int
    entry: int = None
    direction: int = 0
    planned_at: int = 0

    def __post_init__(self):
        if self.entry is not None:
            if self.entry == self.exit:
                raise ValueError("entry and exit coincide")
            if self.entry > self.exit:
                raise ValueError("exit before entry")
            if self.direction not in (1, -1):
                raise ValueError("spread plans need a direction of +1 or -1")


@dataclass(frozen=True)
class AuditEntry:
    tau: int
    action: str
    reason: str
    values: tuple = ()


@dataclass(frozen=True)
class TradeOutcome:
    executions: tuple  # (step, side, price)
    profit: float
    audit: tuple = field(default=(), compare=False)

    def ledger_fields(self):
        acts = ";".join(f"{side}@{step}" for step, side, _ in self.executions)
        prices = ";".join(repr(float(p)) for _, _, p in self.executions)
        return acts, prices, repr(float(self.profit))


# ---------------------------------------------------------------------------
# planning


def _first_argmax(x):
    return int(np.argmax(x))


def _first_argmin(x):
    return int(np.argmin(x))


def _plan_indices(agent, sell_curve, buy_curve=None, sell_max=True, buy_min=True):
    """Zero-based (entry, exit, direction) from a sell rule and a buy rule."""
    sell_curve = np.asarray(sell_curve, dtype=float)
    pick_sell = _first_argmax if sell_max else _first_argmin
    if agent == "seller":
        return None, pick_sell(sell_curve), 0
    buy_curve = np.asarray(buy_curve, dtype=float)
    if sell_curve.size < 2:
        raise ValueError("spread plans need at least two steps")
    b = (_first_argmin if buy_min else _first_argmax)(buy_curve)
    s = pick_sell(sell_curve)
    if b == s:
        masked = sell_curve.copy()
        masked[b] = -np.inf if sell_max else np.inf
        s = pick_sell(masked)
    if b < s:
        return b, s, 1
    return s, b, -1


def _plan_from_curves(agent, family, attitude, curves, offset=1, planned_at=0):
    """Apply the family's rule to ``curves`` (keys median/upper/lower); steps start at ``offset``."""
    if family == "median":
        sell, buy, sell_max, buy_min = curves["median"], curves["median"], True, True
    elif attitude == "risk_seeking":
        sell, buy, sell_max, buy_min = curves["upper"], curves["lower"], True, True
    elif agent == "seller":
        sell, buy, sell_max, buy_min = curves["lower"], None, True, True
    else:
        sell, buy, sell_max, buy_min = curves["upper"], curves["lower"], False, False
    entry, exit_, direction = _plan_indices(agent, sell, buy, sell_max, buy_min)
    return TradePlan(exit_ + offset, None if entry is None else entry + offset, direction, planned_at)


def plan_median(agent, median_path):
    return _plan_from_curves(agent, "median", "none", {"median": median_path})


def plan_band(agent, attitude, upper, lower):
    up = getattr(upper, "values", upper)
    lo = getattr(lower, "values", lower)
    return _plan_from_curves(agent, "band", attitude, {"upper": up, "lower": lo, "median": None})


# ---------------------------------------------------------------------------
# thresholds


def threshold_eta(residuals, method):
    r = np.atleast_1d(np.asarray(residuals, dtype=float))
    if r.size == 0:
        raise ValueError("need at least one residual")
    if method == "infinite":
        return math.inf
    if r.size == 1:
        return float(abs(r[0]))
    if method == "three_sigma":
        return 3.0 * float(r.std())
    if method == "iqr":
        q25, q75 = np.quantile(r, [0.25, 0.75])
        return float(q75 - q25)
    if method == "ipr_5_95":
        q05, q95 = np.quantile(r, [0.05, 0.95])
        return float(q95 - q05)
    if method == "mae":
        return float(np.mean(np.abs(r)))
    raise ValueError(f"unknown threshold method {method!r}")


# ---------------------------------------------------------------------------
# curves shared between specs


@dataclass(frozen=True, eq=False)
class StaticCurves:
    median: np.ndarray
    upper: np.ndarray
    lower: np.ndarray


def static_curves(ensemble, scp):
    return StaticCurves(
        empirical_median_path(ensemble),
        bands.build_band(ensemble, scp, "upper").values,
        bands.build_band(ensemble, scp, "lower").values,
    )


class CurveCache:
    """Memoizes initial and updated curves for one ensemble and realized path."""

    def __init__(self, ensemble, realized):
        self.ensemble = ensemble
        self.realized = np.asarray(realized, dtype=float)
        self._static = {}
        self._dynamic = {}
        self._eta = {}

    def static(self, scp):
        if scp not in self._static:
            self._static[scp] = static_curves(self.ensemble, scp)
        return self._static[scp]

    def dynamic(self, mode, params, scp):
        key = (mode, params.p, params.lam, params.mae_floor, scp) if mode == "kernel" else (mode, scp)
        if key not in self._dynamic:
            init = self.static(scp).median
            self._dynamic[key] = bands.dynamic_curves(self.ensemble.paths, self.realized, init, mode, params, scp)
        return self._dynamic[key]

    def etas(self, method, scp):
        """Threshold per update step from the residuals against the initial median."""
        key = (method, scp)
        if key not in self._eta:
            resid = self.realized - self.static(scp).median
            self._eta[key] = [threshold_eta(resid[:tau], method) for tau in range(1, resid.size + 1)]
        return self._eta[key]


# ---------------------------------------------------------------------------
# execution


class _Book:
    """Executions and audit for one delivery."""

    def __init__(self, agent, realized):
        self.agent = agent
        self.P = realized
        self.executions = []
        self.audit = []

    def execute(self, tau, side, reason, values=()):
        price = float(self.P[tau - 1])
        self.executions.append((tau, side, price))
        self.audit.append(AuditEntry(tau, side, reason, tuple(float(v) for v in values)))

    def note(self, tau, action, reason, values=()):
        self.audit.append(AuditEntry(tau, action, reason, tuple(float(v) for v in values)))

    def outcome(self):
        return TradeOutcome(tuple(self.executions), profit_of(self.agent, self.executions), tuple(self.audit))


def profit_of(agent, executions):
    if agent == "seller":
        (_, side, price), = executions
        if side != "sell":
            raise ValueError("seller must end with a single sale")
        return price
    if len(executions) != 2:
        raise ValueError("spread trades need exactly two executions")
    (_, side0, p0), (_, _, p1) = executions
    s = 1 if side0 == "buy" else -1
    return s * (p1 - p0)


def _open_side(direction):
    return "buy" if direction == 1 else "sell"


def _close_side(direction):
    return "sell" if direction == 1 else "buy"


def execute_static(agent, plan, realized):
    book = _Book(agent, realized)
    if agent == "seller":
        book.execute(plan.exit, "sell", "planned")
    else:
        book.execute(plan.entry, _open_side(plan.direction), "planned")
        book.execute(plan.exit, _close_side(plan.direction), "planned")
    return book.outcome()


def _initial_plan(spec, curves):
    c = {"median": curves.median, "upper": curves.upper, "lower": curves.lower}
    return _plan_from_curves(spec.agent, spec.family, spec.band_attitude, c)


@dataclass
class DynamicState:
    plan: TradePlan
    entered: bool = False
    entry_price: float = None
    done: bool = False


def _candidate(spec, tau, P, med, up, lo):
    """Plan over steps ``tau..H`` from updated curves, with ``P(tau)`` at step ``tau``."""
    head = np.array([P])
    curves = {"median": np.concatenate((head, med)), "upper": np.concatenate((head, up)), "lower": np.concatenate((head, lo))}
    return _plan_from_curves(spec.agent, spec.family, spec.band_attitude, curves, offset=tau, planned_at=tau)


def dynamic_step(spec, state, tau, realized, med_row, up_row, lo_row, eta, book):
    """Apply the reschedule / early-close / postpone rules at update step ``tau``.

    ``*_row`` are full-length rows whose entries for steps ``u > tau`` hold the
    updated curves (zero-based index ``u - 1``).  Mutates ``state`` and ``book``.
    """
    H = len(realized)
    P = float(realized[tau - 1])
    plan = state.plan
    if state.done:
        return state
    if state.entered and tau <= plan.entry:
        raise ValueError("inconsistent state: position open before its entry step")

    def m(u):
        return P if u == tau else float(med_row[u - 1])

    seller = spec.agent == "seller"
    if tau == H:
        if seller:
            book.execute(H, "sell", "planned" if plan.exit == H else "forced")
        else:
            book.execute(H, _close_side(plan.direction), "planned" if plan.exit == H else "forced")
        state.done = True
        return state
    tail = slice(tau, H)
    if seller or state.entered:
        s = 1 if seller else plan.direction
        base = 0.0 if seller else state.entry_price
        if tau < plan.exit:
            lhs = s * (P - base) - eta
            rhs = s * (m(plan.exit) - base)
            if lhs > rhs:
                book.execute(tau, "sell" if seller else _close_side(s), "early_close", (lhs, rhs))
                state.done = True
                return state
            if seller:
                cand = _candidate(spec, tau, P, med_row[tail], up_row[tail], lo_row[tail])
                lhs = m(cand.exit) - eta
                if cand.exit != plan.exit and lhs > rhs:
                    book.note(tau, "reschedule", f"exit {plan.exit}->{cand.exit}", (lhs, rhs))
                    state.plan = cand
                    if cand.exit == tau:
                        book.execute(tau, "sell", "rescheduled")
                        state.done = True
            return state
        if tau == plan.exit:
            future = s * np.asarray(med_row[tail], dtype=float)
            u_star = tau + 1 + _first_argmax(future)
            lhs = s * (m(u_star) - base) - eta
            rhs = s * (P - base)
            if lhs > rhs:
                book.note(tau, "postpone", f"exit {plan.exit}->{u_star}", (lhs, rhs))
                state.plan = replace(plan, exit=u_star, planned_at=tau)
            else:
                book.execute(tau, "sell" if seller else _close_side(s), "planned")
                state.done = True
            return state
        raise ValueError("inconsistent state: exit already passed")
    # spread trader before entry
    if tau > plan.entry:
        raise ValueError("inconsistent state: entry already passed")
    rhs = plan.direction * (m(plan.exit) - m(plan.entry))
    cand = _candidate(spec, tau, P, med_row[tail], up_row[tail], lo_row[tail])
    lhs = cand.direction * (m(cand.exit) - m(cand.entry)) - eta
    if (cand.entry, cand.exit, cand.direction) != (plan.entry, plan.exit, plan.direction) and lhs > rhs:
        book.note(tau, "reschedule", f"{plan.entry},{plan.exit},{plan.direction}->{cand.entry},{cand.exit},{cand.direction}", (lhs, rhs))
        state.plan = plan = cand
    if plan.entry == tau:
        book.execute(tau, _open_side(plan.direction), "planned" if plan.planned_at == 0 else "rescheduled")
        state.entered = True
        state.entry_price = P
    return state


def simulate_strategy(spec, ensemble, realized, cache=None):
    realized = np.asarray(realized, dtype=float)
    H = ensemble.horizon
    if realized.size != H:
        raise ValueError(f"realized path has {realized.size} steps, ensemble has {H}")
    cache = cache or CurveCache(ensemble, realized)
    curves0 = cache.static(spec.scp)
    plan = _initial_plan(spec, curves0)
    if spec.dynamics == "static":
        return execute_static(spec.agent, plan, realized)
    mode = "kernel" if spec.dynamics == "dynamic_kernel" else "mae"
    med, up, lo, _ = cache.dynamic(mode, spec.reweight, spec.scp)
    book = _Book(spec.agent, realized)
    state = DynamicState(plan)
    etas = cache.etas(spec.threshold_method, spec.scp)
    for tau in range(1, H + 1):
        row = min(tau, H - 1)
        dynamic_step(spec, state, tau, realized, med[row], up[row], lo[row], etas[tau - 1], book)
        if state.done:
            break
    return book.outcome()


def replay(agent, audit, realized):
    """Rebuild an outcome from the execution entries of an audit log."""
    realized = np.asarray(realized, dtype=float)
    book = _Book(agent, realized)
    for entry in audit:
        if entry.action in ("buy", "sell"):
            book.execute(entry.tau, entry.action, entry.reason, entry.values)
        else:
            book.note(entry.tau, entry.action, entry.reason, entry.values)
    return book.outcome()


# ---------------------------------------------------------------------------
# benchmarks


def crystal_ball(agent, realized):
    P = np.asarray(realized, dtype=float)
    book = _Book(agent, P)
    if agent == "seller":
        book.execute(_first_argmax(P) + 1, "sell", "hindsight")
        return book.outcome()
    lo, hi = _first_argmin(P), _first_argmax(P)
    if lo == hi:
        book.execute(1, "buy", "hindsight")
        book.execute(2, "sell", "hindsight")
    elif lo < hi:
        book.execute(lo + 1, "buy", "hindsight")
        book.execute(hi + 1, "sell", "hindsight")
    else:
        book.execute(hi + 1, "sell", "hindsight")
        book.execute(lo + 1, "buy", "hindsight")
    return book.outcome()


def naive_endpoints(agent, variant, realized):
    P = np.asarray(realized, dtype=float)
    H = P.size
    if variant not in ("first", "last"):
        raise ValueError("variant must be 'first' or 'last'")
    book = _Book(agent, P)
    if agent == "seller":
        book.execute(1 if variant == "first" else H, "sell", f"naive_{variant}")
    elif variant == "first":
        book.execute(1, "sell", "naive_first")
        book.execute(H, "buy", "naive_first")
    else:
        book.execute(1, "buy", "naive_last")
        book.execute(H, "sell", "naive_last")
    return book.outcome()


# ---------------------------------------------------------------------------
# grid search


def grid_cells(template, grid):
    """Cartesian product of ``grid`` applied to ``template``, in lexicographic key order."""
    keys = list(grid)
    if not keys or any(len(grid[k]) == 0 for k in keys):
        raise ValueError("empty grid")
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        kw = dict(zip(keys, combo))
        rw = ReweightParams(kw.pop("p", template.reweight.p), kw.pop("lam", template.reweight.lam), template.reweight.mae_floor)
        cells.append(replace(template, reweight=rw, **kw))
    return cells


def grid_search(cells, deliveries, maximize=True, cache=None):
    """Score every cell by Sortino over ``deliveries`` (pairs of ensemble and realized path).

    Returns ``(best_spec, rows)`` with one row per cell.  Ties keep the first
    cell in grid order.
    """
    cells = list(cells)
    if not cells:
        raise ValueError("empty grid")
    caches = cache if cache is not None else [CurveCache(e, r) for e, r in deliveries]
    rows = []
    best, best_score = None, None
    for spec in cells:
        pnl = [simulate_strategy(spec, c.ensemble, c.realized, c).profit for c in caches]
        total, risk, score = metrics.trading_scores(pnl, spec.downside_mode)
        rows.append({**spec.parameters(), "strategy": spec.name, "total_profit": total, "downside": risk, "sortino": score})
        key = score if maximize else -score
        if best_score is None or key > best_score:
            best, best_score = spec, key
    return best, rows
