"""Switch between numba-compiled kernels and their pure-numpy counterparts.

Set ``INTRAPATH_NO_JIT=1`` (or any of ``true``/``yes``) before import to run the
numpy fallback everywhere.  The flag is read once at import time; tests that need
both paths call the ``*_numba`` / ``*_numpy`` functions directly.
"""

import os

_flag = os.environ.get("INTRAPATH_NO_JIT", "").strip().lower()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _flag not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or the identity decorator without numba."""
    if not HAS_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
