"""Backend selection for the hot kernels.

Set ``WOVENSEG_DISABLE_NUMBA=1`` to force the pure-numpy path. When numba is
not importable the numpy path is used silently.
"""
import os

_FALSEY = {"", "0", "false", "no", "off"}

NUMBA_DISABLED = os.environ.get("WOVENSEG_DISABLE_NUMBA", "").strip().lower() not in _FALSEY

try:
    if NUMBA_DISABLED:
        raise ImportError("numba disabled by WOVENSEG_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


BACKEND = "numba" if HAVE_NUMBA else "numpy"
