"""Backend selection for the hot loops.

Numba is used when importable unless ``SE2KIT_DISABLE_NUMBA`` is set to a
truthy value, in which case the pure-numpy kernels are used instead.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def numba_requested() -> bool:
    return os.environ.get("SE2KIT_DISABLE_NUMBA", "").strip().lower() in _FALSY


try:
    if not numba_requested():
        raise ImportError("numba disabled by SE2KIT_DISABLE_NUMBA")
    from numba import njit  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        # transparent stand-in so kernel modules still import
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(f):
            return f

        return wrapper


BACKEND = "numba" if HAVE_NUMBA else "numpy"
