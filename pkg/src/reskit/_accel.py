"""
Numba shim.

Set ``RESKIT_NO_NUMBA=1`` to force the pure-numpy kernels (useful when numba
is unavailable or when debugging). The flag is read once at import time.
"""
import os

_disabled = os.environ.get("RESKIT_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kw):
        if len(args) == 1 and callable(args[0]) and not kw:
            return args[0]
        return lambda f: f


USE_NUMBA = HAVE_NUMBA
