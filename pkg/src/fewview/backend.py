"""Kernel backend selection.

Hot numeric loops (sphere tracing, volume rendering) have two
implementations: numba-jitted loops and vectorized numpy. The numba path is
used when numba imports cleanly, unless FEWVIEW_NO_NUMBA is set in the
environment (any non-empty value), which forces the numpy fallback.
"""

import os

_DISABLED = bool(os.environ.get("FEWVIEW_NO_NUMBA"))

try:
    if _DISABLED:
        raise ImportError
    from numba import njit  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        # decorator stub so kernel modules import unchanged
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend_name() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
