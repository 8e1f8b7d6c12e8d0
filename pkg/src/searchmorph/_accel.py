"""Numba switch.

Set ``SEARCHMORPH_NUMBA=0`` in the environment to force the pure-numpy
kernels. The flag is read once at import time.
"""
import os

_flag = os.environ.get("SEARCHMORPH_NUMBA", "1").strip().lower()

try:
    if _flag in ("0", "false", "no", "off"):
        raise ImportError("numba disabled by SEARCHMORPH_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


USE_NUMBA = HAVE_NUMBA
