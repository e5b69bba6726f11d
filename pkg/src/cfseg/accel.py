"""Numba acceleration toggle for the hot numeric kernels.

Every kernel in :mod:`cfseg.kernels` has two implementations: an explicit
loop compiled with ``numba.njit`` and a vectorized pure-numpy fallback.
Setting the environment variable ``CFSEG_NO_NUMBA=1`` (or numba being
unimportable) selects the numpy path. Both paths are exercised by the test
suite and compared by ``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import os
import warnings

ENV_FLAG = "CFSEG_NO_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False
    warnings.warn("numba unavailable, falling back to pure-numpy kernels")


def numba_disabled_by_env() -> bool:
    return os.environ.get(ENV_FLAG, "").strip() not in ("", "0")


def use_numba() -> bool:
    """Whether dispatchers should call the jitted kernel right now."""
    return HAVE_NUMBA and not numba_disabled_by_env()


def maybe_njit(func):
    """``numba.njit(cache=True)`` when numba exists, identity otherwise."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)
