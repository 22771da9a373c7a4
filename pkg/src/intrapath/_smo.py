"""Two-coordinate working-set solver for the epsilon-SVR dual, plus Gram kernels.

The dual is solved over 2N variables ``a = (alpha*, alpha)`` with signs
``s = (+1, -1)`` so that ``beta = alpha* - alpha`` and::

    min 1/2 beta' K beta + eps * sum(a) - y' beta
    s.t. sum(beta) = 0,  0 <= a <= C

Working pairs follow the maximal-violating ``i`` with a second-order choice of
``j``.  Instead of the 2N gradient we keep ``f = K beta``; the gradient of
variable k is ``s_k f_k + p_k``.

Each routine exists twice: an ``@njit`` loop version and a numpy version with
the same arithmetic order where it matters.  ``solve`` / ``gram`` dispatch on
``USE_NUMBA``.
"""

import numpy as np
from scipy.spatial.distance import cdist

from ._accel import USE_NUMBA, njit

CURVATURE_FLOOR = 1e-10


@njit
def _smo_numba(K, y, C, eps, tol, max_iter):
    n = y.shape[0]
    m = 2 * n
    a = np.zeros(m)
    s = np.empty(m)
    p = np.empty(m)
    for k in range(n):
        s[k] = 1.0
        s[n + k] = -1.0
        p[k] = eps - y[k]
        p[n + k] = eps + y[k]
    f = np.zeros(n)
    it = 0
    converged = False
    while it < max_iter:
        # i: maximal violation over I_up
        gmax = -np.inf
        i = -1
        for t in range(m):
            g = s[t] * f[t % n] + p[t]
            if s[t] > 0:
                if a[t] < C and -g >= gmax:
                    gmax = -g
                    i = t
            else:
                if a[t] > 0 and g >= gmax:
                    gmax = g
                    i = t
        gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        ii = i % n if i >= 0 else 0
        for t in range(m):
            g = s[t] * f[t % n] + p[t]
            tt = t % n
            if s[t] > 0:
                if a[t] > 0:
                    diff = gmax + g
                    if g >= gmax2:
                        gmax2 = g
                    if diff > 0 and i >= 0:
                        quad = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                        if quad <= 0:
                            quad = CURVATURE_FLOOR
                        obj = -(diff * diff) / quad
                        if obj <= obj_min:
                            j = t
                            obj_min = obj
            else:
                if a[t] < C:
                    diff = gmax - g
                    if -g >= gmax2:
                        gmax2 = -g
                    if diff > 0 and i >= 0:
                        quad = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                        if quad <= 0:
                            quad = CURVATURE_FLOOR
                        obj = -(diff * diff) / quad
                        if obj <= obj_min:
                            j = t
                            obj_min = obj
        if gmax + gmax2 < tol or i < 0 or j < 0:
            converged = True
            break
        it += 1
        jj = j % n
        gi = s[i] * f[ii] + p[i]
        gj = s[j] * f[jj] + p[j]
        old_ai = a[i]
        old_aj = a[j]
        quad = K[ii, ii] + K[jj, jj] - 2.0 * K[ii, jj]
        if quad <= 0:
            quad = CURVATURE_FLOOR
        if s[i] != s[j]:
            delta = (-gi - gj) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            delta = (gi - gj) / quad
            tot = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if tot > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = tot - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = tot
            if tot > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = tot - C
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = tot
        dbi = s[i] * (a[i] - old_ai)
        dbj = s[j] * (a[j] - old_aj)
        for k in range(n):
            f[k] += K[k, ii] * dbi + K[k, jj] * dbj
    # bias from free variables, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    sum_free = 0.0
    n_free = 0
    for t in range(m):
        yg = s[t] * (s[t] * f[t % n] + p[t])
        if a[t] >= C:
            if s[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif a[t] <= 0:
            if s[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            sum_free += yg
    if n_free > 0:
        rho = sum_free / n_free
    else:
        rho = 0.5 * (ub + lb)
    beta = a[:n] - a[n:]
    return beta, -rho, it, converged


def _smo_numpy(K, y, C, eps, tol, max_iter):
    n = y.shape[0]
    s = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([eps - y, eps + y])
    a = np.zeros(2 * n)
    f = np.zeros(n)
    diagK = np.diag(K)
    pos = s > 0
    it = 0
    converged = False
    while it < max_iter:
        g = s * np.concatenate([f, f]) + p
        up = np.where(pos, a < C, a > 0)
        low = np.where(pos, a > 0, a < C)
        viol_up = np.where(pos, -g, g)  # -s*g
        if not up.any():
            converged = True
            break
        cand = np.where(up, viol_up, -np.inf)
        gmax = cand.max()
        i = int(np.flatnonzero(cand == gmax)[-1])  # last maximum, as the loop's >=
        ii = i % n
        viol_low = np.where(pos, g, -g)  # s*g
        gmax2 = np.where(low, viol_low, -np.inf).max() if low.any() else -np.inf
        diff = gmax + viol_low
        idx = np.arange(2 * n) % n
        quad = diagK[ii] + diagK[idx] - 2.0 * K[ii, idx]
        quad = np.where(quad <= 0, CURVATURE_FLOOR, quad)
        obj = np.where(low & (diff > 0), -(diff * diff) / quad, np.inf)
        if gmax + gmax2 < tol or not np.isfinite(obj).any():
            converged = True
            break
        omin = obj.min()
        j = int(np.flatnonzero(obj == omin)[-1])
        it += 1
        jj = j % n
        gi, gj = g[i], g[j]
        old_ai, old_aj = a[i], a[j]
        q = diagK[ii] + diagK[jj] - 2.0 * K[ii, jj]
        if q <= 0:
            q = CURVATURE_FLOOR
        ai, aj = a[i], a[j]
        if s[i] != s[j]:
            delta = (-gi - gj) / q
            d = ai - aj
            ai += delta
            aj += delta
            if d > 0:
                if aj < 0:
                    aj, ai = 0.0, d
            elif ai < 0:
                ai, aj = 0.0, -d
            if d > 0:
                if ai > C:
                    ai, aj = C, C - d
            elif aj > C:
                aj, ai = C, C + d
        else:
            delta = (gi - gj) / q
            tot = ai + aj
            ai -= delta
            aj += delta
            if tot > C:
                if ai > C:
                    ai, aj = C, tot - C
            elif aj < 0:
                aj, ai = 0.0, tot
            if tot > C:
                if aj > C:
                    aj, ai = C, tot - C
            elif ai < 0:
                ai, aj = 0.0, tot
        a[i], a[j] = ai, aj
        f += K[:, ii] * (s[i] * (ai - old_ai)) + K[:, jj] * (s[j] * (aj - old_aj))
    g = s * np.concatenate([f, f]) + p
    yg = s * g
    at_ub = a >= C
    at_lb = a <= 0
    free = ~(at_ub | at_lb)
    if free.any():
        rho = yg[free].sum() / free.sum()
    else:
        ub_mask = (at_ub & ~pos) | (at_lb & pos)
        lb_mask = (at_ub & pos) | (at_lb & ~pos)
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = 0.5 * (ub + lb)
    return a[:n] - a[n:], -rho, it, converged


def solve(K, y, C, eps, tol, max_iter):
    """Return ``(beta, bias, iterations, converged)`` for the epsilon-SVR dual."""
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if USE_NUMBA:
        beta, b, it, ok = _smo_numba(K, y, float(C), float(eps), float(tol), int(max_iter))
        return beta, float(b), int(it), bool(ok)
    return _smo_numpy(K, y, float(C), float(eps), float(tol), int(max_iter))


@njit
def _gram_numba(XA, YA, XB, YB, l, g):
    na = XA.shape[0]
    nb = XB.shape[0]
    d = XA.shape[1]
    q = YA.shape[1]
    out = np.empty((na, nb))
    for r in range(na):
        for c in range(nb):
            sx = 0.0
            for k in range(d):
                t = XA[r, k] - XB[c, k]
                sx += t * t
            sy = 0.0
            for k in range(q):
                t = YA[r, k] - YB[c, k]
                sy += t * t
            out[r, c] = np.exp(-l * np.sqrt(sx)) * np.exp(-g * sy)
    return out


def _gram_numpy(XA, YA, XB, YB, l, g):
    dx = cdist(XA, XB, "euclidean")
    dy = cdist(YA, YB, "sqeuclidean")
    return np.exp(-l * dx) * np.exp(-g * dy)


def gram(XA, YA, XB, YB, l, g):
    """Corrected-kernel matrix between row sets A and B."""
    args = [np.ascontiguousarray(np.atleast_2d(v), dtype=np.float64) for v in (XA, YA, XB, YB)]
    if USE_NUMBA:
        return _gram_numba(*args, float(l), float(g))
    return _gram_numpy(*args, float(l), float(g))
