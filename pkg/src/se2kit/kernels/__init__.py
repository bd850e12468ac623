"""Hot simulation kernels with a numba and a pure-numpy implementation."""

from .. import _accel
from . import _numpy

if _accel.HAVE_NUMBA:
    from . import _numba as _impl
else:
    _impl = _numpy

BACKEND = _accel.BACKEND
forward = _impl.forward
backward = _impl.backward


def get(backend: str):
    """Kernel module for ``"numba"`` or ``"numpy"``."""
    if backend == "numpy":
        return _numpy
    if backend == "numba":
        if not _accel.HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is disabled or missing")
        from . import _numba
        return _numba
    raise ValueError(f"unknown backend {backend!r}")
