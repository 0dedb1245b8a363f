"""Backend selection for the hot loops.

The kernels in :mod:`stallsgd.kernels` come in two flavours: an explicit-loop
version compiled with numba and a vectorized numpy version. The active one is
chosen from the ``STALLSGD_BACKEND`` environment variable (``numba`` or
``numpy``) at import time and can be switched at runtime with
:func:`set_backend`. If numba cannot be imported the numpy path is used.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

BACKENDS = ("numba", "numpy")

_requested = os.environ.get("STALLSGD_BACKEND", "numba").strip().lower()
if _requested not in BACKENDS:
    raise ValueError(f"STALLSGD_BACKEND must be one of {BACKENDS}, got {_requested!r}")

_backend = _requested if HAS_NUMBA else "numpy"


def njit(func):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    if HAS_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def get_backend():
    return _backend


def set_backend(name):
    """Switch the kernel backend; returns the previous one."""
    global _backend
    name = name.lower()
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous
