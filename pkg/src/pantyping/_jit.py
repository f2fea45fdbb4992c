"""Backend selection for the compiled kernels.

Set ``PANTYPING_BACKEND=numpy`` to force the pure-numpy kernels; the default
``numba`` falls back to numpy automatically when numba cannot be imported.
"""
import os
import warnings

BACKEND_ENV = "PANTYPING_BACKEND"


def _requested_backend():
    value = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if value not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {value!r}")
    return value


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


BACKEND = _requested_backend()
if BACKEND == "numba" and not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba unavailable, using numpy kernels")
    BACKEND = "numpy"

USE_NUMBA = BACKEND == "numba"

__all__ = ["njit", "HAVE_NUMBA", "BACKEND", "USE_NUMBA", "BACKEND_ENV"]
