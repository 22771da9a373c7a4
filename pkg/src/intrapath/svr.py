"""Corrected-kernel support vector regression.

The kernel multiplies a Laplace factor on the feature distance by a Gaussian
factor on the distance between auxiliary forecasts::

    K(x_i, x_j) = exp(-l * |x_i - x_j|) * exp(-g * |yhat_i - yhat_j|^2)
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import norm

from . import _smo

MODEL_FORMAT_VERSION = 1

# kernel-width levels used in the case study
LAPLACE_LEVELS = (0.75, 0.5)
GAUSS_LEVELS = (0.75, 0.75)


class DegenerateDistances(ValueError):
    pass


@dataclass(frozen=True)
class KernelParams:
    l: float
    g: float
    alpha1_laplace: float = LAPLACE_LEVELS[0]
    alpha2_laplace: float = LAPLACE_LEVELS[1]
    alpha1_gauss: float = GAUSS_LEVELS[0]
    alpha2_gauss: float = GAUSS_LEVELS[1]

    def __post_init__(self):
        if not (self.l > 0 and self.g > 0):
            raise ValueError(f"kernel widths must be positive (l={self.l}, g={self.g})")


@dataclass(frozen=True)
class SvrHyperParams:
    C: float = 1.0
    epsilon: float = 0.1
    solver_tolerance: float = 1e-6
    max_passes: int = None  # default 10 * N * 2N

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

    def iteration_cap(self, n):
        return self.max_passes if self.max_passes is not None else 10 * n * 2 * n


@dataclass(frozen=True, eq=False)
class SvrModel:
    """Fitted duals for one path step; only support rows are kept for prediction."""

    alpha: np.ndarray
    alpha_star: np.ndarray
    bias: float
    support_indices: np.ndarray
    stored_features: np.ndarray
    stored_aux: np.ndarray
    kernel: KernelParams
    converged: bool = True
    iterations: int = 0

    @property
    def coef(self):
        """``alpha* - alpha`` over the support rows."""
        return (self.alpha_star - self.alpha)[self.support_indices]

    @property
    def n_train(self):
        return self.alpha.size

    def to_dict(self):
        return {
            "format": "intrapath.svr",
            "version": MODEL_FORMAT_VERSION,
            "alpha": self.alpha.tolist(),
            "alpha_star": self.alpha_star.tolist(),
            "bias": self.bias,
            "support_indices": self.support_indices.tolist(),
            "stored_features": self.stored_features.tolist(),
            "stored_aux": self.stored_aux.tolist(),
            "kernel": [self.kernel.l, self.kernel.g, self.kernel.alpha1_laplace, self.kernel.alpha2_laplace, self.kernel.alpha1_gauss, self.kernel.alpha2_gauss],
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "intrapath.svr" or d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError("unsupported model artifact")
        dim = len(d["stored_features"][0]) if d["stored_features"] else 0
        return cls(
            np.array(d["alpha"], dtype=float),
            np.array(d["alpha_star"], dtype=float),
            float(d["bias"]),
            np.array(d["support_indices"], dtype=np.int64),
            np.array(d["stored_features"], dtype=float).reshape(-1, dim),
            np.array(d["stored_aux"], dtype=float).reshape(len(d["support_indices"]), -1),
            KernelParams(*d["kernel"]),
            bool(d["converged"]),
            int(d["iterations"]),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def fingerprint(self):
        h = hashlib.sha256()
        for arr in (self.alpha, self.alpha_star, self.stored_features, self.stored_aux):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(np.float64(self.bias).tobytes())
        h.update(np.array([self.kernel.l, self.kernel.g]).tobytes())
        return h.hexdigest()[:16]


def _aux2d(aux, n):
    aux = np.asarray(aux, dtype=float)
    if aux.ndim == 0:
        aux = aux.reshape(1, 1)
    elif aux.ndim == 1:
        aux = aux.reshape(n, -1) if n > 0 else aux.reshape(0, 1)
    return aux


def corrected_kernel(x_i, x_j, yhat_i, yhat_j, params):
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    x_j = np.atleast_1d(np.asarray(x_j, dtype=float))
    if x_i.shape != x_j.shape:
        raise ValueError(f"dimension mismatch: {x_i.shape} vs {x_j.shape}")
    yi = np.atleast_1d(np.asarray(yhat_i, dtype=float))
    yj = np.atleast_1d(np.asarray(yhat_j, dtype=float))
    if yi.shape != yj.shape:
        raise ValueError("auxiliary forecast dimension mismatch")
    dx = math.sqrt(float(np.sum((x_i - x_j) ** 2)))
    dy2 = float(np.sum((yi - yj) ** 2))
    return math.exp(-params.l * dx) * math.exp(-params.g * dy2)


def gram_matrix(X, aux, params, X2=None, aux2=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    aux = _aux2d(aux, X.shape[0])
    if X2 is None:
        X2, aux2 = X, aux
    else:
        X2 = np.atleast_2d(np.asarray(X2, dtype=float))
        aux2 = _aux2d(aux2, X2.shape[0])
    if X.shape[1] != X2.shape[1]:
        raise ValueError("dimension mismatch")
    return _smo.gram(X, aux, X2, aux2, params.l, params.g)


def pairwise_distances(X, aux, max_rows=2000, rng=None):
    """Distinct-pair feature distances and squared auxiliary distances.

    Large training sets are subsampled to ``max_rows`` rows first.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    aux = _aux2d(aux, X.shape[0])
    if X.shape[0] > max_rows:
        rng = rng or np.random.default_rng(0)
        keep = np.sort(rng.choice(X.shape[0], max_rows, replace=False))
        X, aux = X[keep], aux[keep]
    return pdist(X, "euclidean"), pdist(aux, "sqeuclidean")


def fit_kernel_widths(pairwise_x_dists, pairwise_yhat_sqdists, levels=(LAPLACE_LEVELS, GAUSS_LEVELS), fallback=None):
    """Match empirical distance quantiles to the Laplace / Gaussian kernel quantiles.

    A zero quantile raises ``DegenerateDistances`` unless ``fallback`` is
    given, in which case that width is used for the degenerate factor.
    """
    (a1l, a2l), (a1g, a2g) = levels
    dx = np.asarray(pairwise_x_dists, dtype=float)
    dy = np.asarray(pairwise_yhat_sqdists, dtype=float)
    qx = float(np.quantile(dx, a2l)) if dx.size else 0.0
    qy = float(np.quantile(dy, a2g)) if dy.size else 0.0
    if fallback is None:
        if dx.size == 0 or dy.size == 0:
            raise DegenerateDistances("empty distance sample")
        if not qx > 0:
            raise DegenerateDistances("degenerate distance distribution (features)")
        if not qy > 0:
            raise DegenerateDistances("degenerate distance distribution (auxiliary forecasts)")
    z = float(norm.ppf(a1g))
    l = -math.log(2.0 - 2.0 * a1l) / qx if qx > 0 else fallback
    g = z * z / (2.0 * qy * qy) if qy > 0 else fallback
    return KernelParams(l, g, a1l, a2l, a1g, a2g)


def solve_dual(gram, targets, hyper=SvrHyperParams(), features=None, aux=None, kernel=None):
    """Fit the dual for a precomputed Gram matrix.

    ``features``/``aux``/``kernel`` are stored on the model (support rows
    only) so it can predict on new inputs; without them the model can only
    be evaluated through ``predict_from_gram``.
    """
    gram = np.asarray(gram, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    n = y.size
    if gram.shape != (n, n):
        raise ValueError(f"Gram matrix {gram.shape} does not match {n} targets")
    if n and not np.allclose(gram, gram.T, atol=1e-10):
        raise ValueError("Gram matrix is not symmetric")
    beta, bias, it, ok = _smo.solve(gram, y, hyper.C, hyper.epsilon, hyper.solver_tolerance, hyper.iteration_cap(n))
    alpha_star = np.maximum(beta, 0.0)
    alpha = np.maximum(-beta, 0.0)
    support = np.flatnonzero(beta != 0.0)
    if features is not None:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        A = _aux2d(aux, X.shape[0])
        stored_x, stored_a = X[support], A[support]
    else:
        stored_x, stored_a = np.zeros((support.size, 0)), np.zeros((support.size, 0))
    if kernel is None:
        kernel = KernelParams(1.0, 1.0)
    return SvrModel(alpha, alpha_star, float(bias), support, stored_x, stored_a, kernel, ok, it)


def fit(X, aux, y, hyper=SvrHyperParams(), kernel=None):
    """Choose kernel widths from the data (unless given) and solve the dual."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    aux = _aux2d(aux, X.shape[0])
    if kernel is None:
        kernel = fit_kernel_widths(*pairwise_distances(X, aux))
    K = gram_matrix(X, aux, kernel)
    return solve_dual(K, y, hyper, X, aux, kernel)


def predict_from_gram(model, gram_rows):
    """Predictions given kernel values against all training rows (``n_new x N``)."""
    gram_rows = np.atleast_2d(gram_rows)
    return gram_rows[:, model.support_indices] @ model.coef + model.bias


def predict_many(model, X, aux):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.support_indices.size == 0:
        return np.full(X.shape[0], model.bias)
    if X.shape[1] != model.stored_features.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {model.stored_features.shape[1]}")
    K = gram_matrix(X, _aux2d(aux, X.shape[0]), model.kernel, model.stored_features, model.stored_aux)
    return K @ model.coef + model.bias


def predict(model, x, yhat_aux):
    """``sum_i (alpha*_i - alpha_i) K(x_i, x) + b`` over the support vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(predict_many(model, x.reshape(1, -1), np.atleast_1d(yhat_aux).reshape(1, -1))[0])


def dual_objective(gram, targets, beta, epsilon):
    """Dual objective written in ``beta = alpha* - alpha`` (with complementary slackness)."""
    beta = np.asarray(beta, dtype=float)
    y = np.asarray(targets, dtype=float)
    return 0.5 * beta @ gram @ beta + epsilon * np.abs(beta).sum() - y @ beta
