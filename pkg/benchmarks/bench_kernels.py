"""Time each hot kernel on its numba and numpy paths.

Usage::

    python benchmarks/bench_kernels.py [--repeat N]

Both implementations are called directly, so the ``INTRAPATH_NO_JIT`` flag does
not matter here.  The first numba call (compilation or cache load) is excluded.
"""

import argparse
import timeit

import numpy as np

from intrapath import _kernels, _smo
from intrapath.svr import KernelParams, gram_matrix


def cases(rng):
    n_train, H = 60, 31
    X = rng.normal(size=(n_train, 40))
    A = rng.normal(size=(n_train, 1))
    K = gram_matrix(X, A, KernelParams(0.05, 0.5))
    y = rng.normal(size=n_train)
    XB = rng.normal(size=(400, 40))
    AB = rng.normal(size=(400, 1))
    xa, xb = rng.normal(size=1000), rng.normal(size=999)
    wa, wb = np.full(1000, 1e-3), np.full(999, 1 / 999)
    paths = rng.normal(size=(60, H)).cumsum(axis=1)
    realized = rng.normal(size=H).cumsum()
    med = np.median(paths, axis=0)
    return {
        "smo (n=60)": (_smo._smo_numba, _smo._smo_numpy, (K, y, 1.0, 0.1, 1e-6, 100000)),
        "gram (400x400, d=40)": (_smo._gram_numba, _smo._gram_numpy, (XB, AB, XB, AB, 0.05, 0.5)),
        "w1 (1000 atoms)": (_kernels._w1_numba, _kernels._w1_numpy, (xa, wa, xb, wb)),
        "dynamic curves (60x31)": (
            _kernels._curves_numba,
            _kernels._curves_numpy,
            (paths, realized, med, 0, 0.5, 0.35, 0.01, 0.5),
        ),
    }


def bench(fn, args, repeat):
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.2:
        number *= 2
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, (fast, slow, fargs) in cases(rng).items():
        fast(*fargs)
        t_fast = bench(fast, fargs, args.repeat)
        t_slow = bench(slow, fargs, args.repeat)
        print(f"{name:<24}{1e3 * t_fast:>12.3f}{1e3 * t_slow:>12.3f}{t_slow / t_fast:>9.1f}x")


if __name__ == "__main__":
    main()
