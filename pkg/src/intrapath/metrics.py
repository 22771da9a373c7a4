"""Forecast and trading evaluation: MAE, pinball, CRPS, profit, downside risk, Sortino."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .quantiles import quantile_columns

QUANTILE_GRID = np.round(np.arange(1, 100) / 100.0, 2)


@dataclass
class EvalReport:
    mae: float = float("nan")
    crps: float = float("nan")
    per_quantile_pinball: list = field(default_factory=list)
    total_profit: float = float("nan")
    downside: float = float("nan")
    sortino: float = float("nan")
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        for k in ("mae", "crps", "total_profit", "downside", "sortino"):
            d[k] = _json_float(d[k])
        d["per_quantile_pinball"] = [float(v) for v in self.per_quantile_pinball]
        return d


def _json_float(x):
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def mae_paths(realized, forecasts):
    """Mean absolute deviation over every (delivery, step, day) cell."""
    realized = np.asarray(realized, dtype=float)
    forecasts = np.asarray(forecasts, dtype=float)
    if realized.shape != forecasts.shape:
        raise ValueError(f"shape mismatch: {realized.shape} vs {forecasts.shape}")
    return float(np.mean(np.abs(realized - forecasts)))


def pinball(realized, q_hat, alpha):
    """Quantile loss; vectorized over matching shapes."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any((alpha <= 0) | (alpha >= 1)):
        raise ValueError("alpha must lie in (0, 1)")
    p = np.asarray(realized, dtype=float)
    q = np.asarray(q_hat, dtype=float)
    loss = np.where(p < q, (1 - alpha) * (q - p), alpha * (p - q))
    return float(loss) if loss.ndim == 0 else loss


def pinball_by_level(paths, realized, weights=None, grid=QUANTILE_GRID):
    """Mean pinball per level over the steps of one ensemble, shape ``len(grid)``."""
    q = quantile_columns(paths, grid, weights)  # len(grid) x H
    return pinball(np.asarray(realized, dtype=float)[None, :], q, np.asarray(grid)[:, None]).mean(axis=1)


def crps_cell(paths, realized, weights=None, grid=QUANTILE_GRID):
    """Level-averaged pinball for one ensemble, averaged over its steps."""
    return float(pinball_by_level(paths, realized, weights, grid).mean())


def crps(ensembles, realized_paths, grid=QUANTILE_GRID):
    """CRPS over cells; ``ensembles`` yields objects with ``paths`` and ``weights``.

    Returns ``(crps, per_level)`` where ``per_level`` averages each level over
    all cells and steps.
    """
    levels = np.array([pinball_by_level(e.paths, r, e.weights, grid) for e, r in zip(ensembles, realized_paths, strict=True)])
    if levels.size == 0:
        raise ValueError("no cells")
    per_level = levels.mean(axis=0)
    return float(per_level.mean()), per_level


def total_profit(pnl):
    pnl = np.asarray(pnl, dtype=float)
    if pnl.size == 0:
        raise ValueError("empty pnl")
    return float(math.fsum(pnl))


def downside(pnl, mode):
    """Semi-deviation ``sqrt(mean(min(pi, mu)^2))``; ``mu`` is 0 (spread) or the pnl mean (seller)."""
    pnl = np.asarray(pnl, dtype=float)
    if pnl.size == 0:
        raise ValueError("empty pnl")
    if mode in ("spread", "spread_trader"):
        mu = 0.0
    elif mode == "seller":
        mu = float(pnl.mean())
    else:
        raise ValueError(f"unknown downside mode {mode!r}")
    return math.sqrt(math.fsum(np.minimum(pnl, mu) ** 2) / pnl.size)


def sortino(total, risk):
    if risk == 0:
        return math.inf if total > 0 else (-math.inf if total < 0 else 0.0)
    return total / risk


def trading_scores(pnl, mode):
    total = total_profit(pnl)
    risk = downside(pnl, mode)
    return total, risk, sortino(total, risk)
