"""Hot loops outside the SVR solver, each as an ``@njit`` and a numpy twin."""

import numpy as np

from ._accel import USE_NUMBA, njit

MASS_TOL = 1e-12


# ---------------------------------------------------------------------------
# 1-D Wasserstein distance: integral of |F_a - F_b|


@njit
def _w1_numba(xa, wa, xb, wb):
    ia = np.argsort(xa, kind="mergesort")
    ib = np.argsort(xb, kind="mergesort")
    na = xa.shape[0]
    nb = xb.shape[0]
    i = 0
    j = 0
    fa = 0.0
    fb = 0.0
    total = 0.0
    prev = 0.0
    started = False
    while i < na or j < nb:
        if j >= nb or (i < na and xa[ia[i]] <= xb[ib[j]]):
            x = xa[ia[i]]
        else:
            x = xb[ib[j]]
        if started:
            total += abs(fa - fb) * (x - prev)
        while i < na and xa[ia[i]] == x:
            fa += wa[ia[i]]
            i += 1
        while j < nb and xb[ib[j]] == x:
            fb += wb[ib[j]]
            j += 1
        prev = x
        started = True
    return total


def _w1_numpy(xa, wa, xb, wb):
    support = np.union1d(xa, xb)
    if support.size < 2:
        return 0.0
    oa = np.argsort(xa, kind="stable")
    ob = np.argsort(xb, kind="stable")
    ca = np.cumsum(wa[oa])
    cb = np.cumsum(wb[ob])
    ka = np.searchsorted(xa[oa], support[:-1], side="right")
    kb = np.searchsorted(xb[ob], support[:-1], side="right")
    Fa = np.where(ka > 0, ca[np.maximum(ka - 1, 0)], 0.0)
    Fb = np.where(kb > 0, cb[np.maximum(kb - 1, 0)], 0.0)
    return float(np.sum(np.abs(Fa - Fb) * np.diff(support)))


def w1(xa, wa, xb, wb):
    args = [np.ascontiguousarray(v, dtype=np.float64) for v in (xa, wa, xb, wb)]
    if USE_NUMBA:
        return float(_w1_numba(*args))
    return _w1_numpy(*args)


# ---------------------------------------------------------------------------
# dynamic reweighting: weighted medians and bands for every update step


@njit
def _kernel_logw(paths, realized, tau, mae, p, lam):
    n = paths.shape[0]
    tw = np.empty(tau)
    s = 0.0
    for u in range(tau):
        tw[u] = np.exp(-lam * (tau - 1 - u))
        s += tw[u]
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for u in range(tau):
            d = realized[u] - paths[i, u]
            acc += tw[u] / s * d * d
        out[i] = -mae * acc ** (p / 2.0)
    return out


@njit
def _normalize_log(logw):
    n = logw.shape[0]
    mx = -np.inf
    for i in range(n):
        if logw[i] > mx:
            mx = logw[i]
    w = np.empty(n)
    if not np.isfinite(mx):
        w[:] = 1.0 / n
        return w, True
    s = 0.0
    for i in range(n):
        w[i] = np.exp(logw[i] - mx)
        s += w[i]
    for i in range(n):
        w[i] /= s
    return w, False


@njit
def _inverse_mae(paths, realized, tau):
    n = paths.shape[0]
    dev = np.empty(n)
    n_zero = 0
    for i in range(n):
        acc = 0.0
        for u in range(tau):
            acc += abs(realized[u] - paths[i, u])
        dev[i] = acc / tau
        if dev[i] == 0.0:
            n_zero += 1
    w = np.empty(n)
    if n_zero > 0:
        for i in range(n):
            w[i] = 1.0 / n_zero if dev[i] == 0.0 else 0.0
        return w
    s = 0.0
    for i in range(n):
        w[i] = 1.0 / dev[i]
        s += w[i]
    for i in range(n):
        w[i] /= s
    return w


@njit
def _retain(extremity, weights, scp):
    """Indices kept by the band filter, least extreme first; massless paths never count."""
    order = np.argsort(extremity, kind="mergesort")
    kept = np.empty(order.shape[0], dtype=np.int64)
    cum = 0.0
    k = 0
    for i in order:
        if weights[i] <= 0.0:
            continue
        kept[k] = i
        k += 1
        cum += weights[i]
        if cum >= scp - MASS_TOL:
            break
    if k == 0:
        kept[0] = order[0]
        k = 1
    return kept[:k]


@njit
def _curves_numba(paths, realized, init_median, mode, p, lam, floor, scp):
    """Weighted medians and upper/lower bands after each update ``tau = 1..H-1``.

    Row ``tau`` holds values for steps ``u > tau`` (zero-based columns
    ``tau..H-1``); columns ``< tau`` are NaN.  ``mode`` 0 is the kernel, 1 is
    inverse MAE.  ``flags[tau]`` marks an underflow fallback to uniform.
    """
    n, H = paths.shape
    med = np.full((H, H), np.nan)
    up = np.full((H, H), np.nan)
    lo = np.full((H, H), np.nan)
    flags = np.zeros(H, dtype=np.bool_)
    order = np.empty((H, n), dtype=np.int64)
    for u in range(H):
        order[u] = np.argsort(paths[:, u], kind="mergesort")
    tailmax = np.empty(n)
    tailmin = np.empty(n)
    for tau in range(1, H):
        if mode == 0:
            acc = 0.0
            for u in range(tau):
                acc += abs(realized[u] - init_median[u])
            mae = max(floor, acc / tau)
            w, flag = _normalize_log(_kernel_logw(paths, realized, tau, mae, p, lam))
            flags[tau] = flag
        else:
            w = _inverse_mae(paths, realized, tau)
        for u in range(tau, H):
            cum = 0.0
            for k in range(n):
                cum += w[order[u, k]]
                if cum >= 0.5 - MASS_TOL:
                    med[tau, u] = paths[order[u, k], u]
                    break
        for i in range(n):
            mx = -np.inf
            mn = np.inf
            for u in range(tau, H):
                if paths[i, u] > mx:
                    mx = paths[i, u]
                if paths[i, u] < mn:
                    mn = paths[i, u]
            tailmax[i] = mx
            tailmin[i] = -mn
        keep_u = _retain(tailmax, w, scp)
        keep_l = _retain(tailmin, w, scp)
        for u in range(tau, H):
            mx = -np.inf
            for k in keep_u:
                if paths[k, u] > mx:
                    mx = paths[k, u]
            up[tau, u] = mx
            mn = np.inf
            for k in keep_l:
                if paths[k, u] < mn:
                    mn = paths[k, u]
            lo[tau, u] = mn
    return med, up, lo, flags


def _curves_numpy(paths, realized, init_median, mode, p, lam, floor, scp):
    from . import bands

    n, H = paths.shape
    med = np.full((H, H), np.nan)
    up = np.full((H, H), np.nan)
    lo = np.full((H, H), np.nan)
    flags = np.zeros(H, dtype=bool)
    params = bands.ReweightParams(p, lam, floor)
    for tau in range(1, H):
        if mode == 0:
            w, flags[tau] = bands.kernel_weights(realized[:tau], paths, init_median, params, return_flag=True)
        else:
            w = bands.inverse_mae_weights(realized[:tau], paths)
        med[tau, tau:] = bands.weighted_median_tail(paths, w, tau)
        up[tau, tau:] = bands.filtered_band(paths[:, tau:], w, scp, "upper")[0]
        lo[tau, tau:] = bands.filtered_band(paths[:, tau:], w, scp, "lower")[0]
    return med, up, lo, flags


def dynamic_curves(paths, realized, init_median, mode, p=0.5, lam=0.35, floor=0.01, scp=0.5):
    args = [np.ascontiguousarray(v, dtype=np.float64) for v in (paths, realized, init_median)]
    if USE_NUMBA:
        return _curves_numba(*args, int(mode), float(p), float(lam), float(floor), float(scp))
    return _curves_numpy(*args, int(mode), float(p), float(lam), float(floor), float(scp))
