"""Numba shim.

Kernels are written as plain loops over numpy arrays so they run unchanged
without numba. Set ``PLATOONSIM_NO_NUMBA=1`` to force the pure-numpy path
(useful for debugging and for the kernel benchmark).
"""
import os

USE_NUMBA = os.environ.get("PLATOONSIM_NO_NUMBA", "").strip().lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        import warnings

        warnings.warn("numba is not installed - falling back to pure numpy kernels")
        USE_NUMBA = False

if USE_NUMBA:

    def kernel(func):
        return _njit(cache=True, nogil=True)(func)

else:

    def kernel(func):
        return func


def py_func(func):
    """Return the undecorated Python function behind a kernel."""
    return getattr(func, "py_func", func)
