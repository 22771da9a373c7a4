"""Empirical quantile conventions shared by ensembles, bands, strategies and metrics.

Unweighted (or uniformly weighted) samples use linear interpolation between
order statistics.  Non-uniform weights use the left-continuous inverse CDF
``inf{x : F(x) >= q}``.  Medians of ensembles always use the lower median,
which is the inverse-CDF rule at ``q = 0.5``.
"""

import numpy as np

MASS_TOL = 1e-12


def _uniform(weights, n):
    return weights is None or np.allclose(weights, 1.0 / n, rtol=0, atol=1e-15)


def inverse_cdf(values, weights, q):
    """Left-continuous inverse CDF of a weighted sample, vectorized over ``q``."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = np.full(v.size, 1.0 / v.size) if weights is None else np.asarray(weights, dtype=float)[order]
    cum = np.cumsum(w)
    q = np.asarray(q, dtype=float)
    idx = np.searchsorted(cum, q - MASS_TOL, side="left")
    return v[np.minimum(idx, v.size - 1)]


def quantile(values, q, weights=None):
    """Empirical quantile under the package convention."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    if _uniform(weights, values.size):
        return np.quantile(values, q)
    return inverse_cdf(values, weights, q)


def lower_median(values, weights=None):
    return float(inverse_cdf(values, weights, 0.5))


def quantile_columns(paths, q, weights=None):
    """Per-column quantiles of an ``n x H`` matrix, shape ``len(q) x H``."""
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if _uniform(weights, paths.shape[0]):
        return np.quantile(paths, q, axis=0)
    w = np.asarray(weights, dtype=float)
    return np.stack([inverse_cdf(paths[:, u], w, q) for u in range(paths.shape[1])], axis=1)
