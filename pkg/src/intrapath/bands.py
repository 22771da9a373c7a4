"""Simultaneous-coverage prediction bands and dynamic scenario reweighting."""

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .quantiles import MASS_TOL, inverse_cdf

log = logging.getLogger(__name__)

SIDES = ("upper", "lower")


@dataclass(frozen=True, eq=False)
class PredictionBand:
    side: str
    scp: float
    values: np.ndarray
    retained_indices: np.ndarray
    from_step: int = 0
    flagged: bool = False

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")


@dataclass(frozen=True)
class ReweightParams:
    p: float = 0.5
    lam: float = 0.35
    mae_floor: float = 0.01

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("p must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


def _check_scp(scp):
    if not 0 < scp < 1:
        raise ValueError(f"scp must lie in (0, 1), got {scp}")


def filtered_band(paths, weights, scp, side):
    """Drop the most extreme paths until the retained mass first reaches ``scp``.

    Returns ``(values, retained, flagged)``.  Extremity is the pathwise maximum
    (upper) or minimum (lower); ties go to the lower scenario index.  Paths
    with zero weight are never retained.
    """
    _check_scp(scp)
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    if paths.shape[0] == 0:
        raise ValueError("empty ensemble")
    w = np.full(paths.shape[0], 1.0 / paths.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    extremity = paths.max(axis=1) if side == "upper" else -paths.min(axis=1)
    order = np.argsort(extremity, kind="stable")
    if np.any(w[order] > 0):
        order = order[w[order] > 0]
    cum = np.cumsum(w[order])
    k = int(np.searchsorted(cum, scp - MASS_TOL, side="left")) + 1
    flagged = False
    if k > order.size:
        k = order.size
    if k < 1:
        k, flagged = 1, True
    kept = np.sort(order[:k])
    values = paths[kept].max(axis=0) if side == "upper" else paths[kept].min(axis=0)
    return values, kept, flagged


def build_band(ensemble, scp, side):
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}")
    values, kept, flagged = filtered_band(ensemble.paths, ensemble.weights, scp, side)
    return PredictionBand(side, scp, values, kept, 0, flagged)


def time_weights(tau, lam):
    """Exponentially decaying weights over steps ``1..tau``, normalized."""
    w = np.exp(-lam * (tau - np.arange(1, tau + 1)))
    return w / w.sum()


def kernel_log_weights(realized, paths, initial_median, params):
    realized = np.asarray(realized, dtype=float)
    tau = realized.size
    if tau < 1:
        raise ValueError("need at least one realized step")
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    mae = max(params.mae_floor, float(np.mean(np.abs(realized - np.asarray(initial_median)[:tau]))))
    with np.errstate(over="ignore"):
        dist = (time_weights(tau, params.lam) * (realized - paths[:, :tau]) ** 2).sum(axis=1)
    return -mae * dist ** (params.p / 2.0)


def kernel_weights(realized, ensemble, initial_median, params=ReweightParams(), return_flag=False):
    """Normalized generalized-Gaussian kernel weights of each scenario at ``tau = len(realized)``."""
    paths = getattr(ensemble, "paths", ensemble)
    logw = kernel_log_weights(realized, paths, initial_median, params)
    mx = logw.max()
    if not np.isfinite(mx):
        log.warning("kernel weights underflow; using uniform weights")
        w, flag = np.full(logw.size, 1.0 / logw.size), True
    else:
        w = np.exp(logw - mx)
        w, flag = w / w.sum(), False
    return (w, flag) if return_flag else w


def inverse_mae_weights(realized, ensemble):
    """Weights proportional to the inverse mean absolute deviation; exact matches take all mass."""
    paths = np.atleast_2d(np.asarray(getattr(ensemble, "paths", ensemble), dtype=float))
    realized = np.asarray(realized, dtype=float)
    if realized.size < 1:
        raise ValueError("need at least one realized step")
    dev = np.abs(realized - paths[:, : realized.size]).mean(axis=1)
    exact = dev == 0
    if exact.any():
        return exact / exact.sum()
    inv = 1.0 / dev
    return inv / inv.sum()


def weighted_median_tail(paths, weights, tau):
    """Per-step weighted lower median over steps ``u > tau``."""
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    if tau >= paths.shape[1]:
        raise ValueError("empty horizon")
    return np.array([inverse_cdf(paths[:, u], weights, 0.5) for u in range(tau, paths.shape[1])])


def weighted_median_path(ensemble, weights, from_step):
    return weighted_median_tail(ensemble.paths, weights, from_step)


def weighted_band(ensemble, weights, scp, side, from_step):
    paths = np.atleast_2d(ensemble.paths)
    if from_step >= paths.shape[1]:
        raise ValueError("empty horizon")
    values, kept, flagged = filtered_band(paths[:, from_step:], weights, scp, side)
    return PredictionBand(side, scp, values, kept, from_step, flagged)


def dynamic_curves(paths, realized, initial_median, mode="kernel", params=ReweightParams(), scp=0.5):
    """Updated medians and bands for every ``tau = 1..H-1`` in one pass.

    Returns ``(median, upper, lower, flags)``; row ``tau`` is valid on
    zero-based columns ``tau..H-1`` (path steps ``u > tau``).
    """
    code = {"kernel": 0, "mae": 1}[mode]
    return _kernels.dynamic_curves(paths, realized, initial_median, code, params.p, params.lam, params.mae_floor, scp)
