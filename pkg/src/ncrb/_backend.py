"""Kernel backend selection.

Hot loops are written twice: a numba ``@njit`` version and a vectorized
numpy version. ``NCRB_DISABLE_JIT=1`` (or a missing numba) selects the
numpy path at import time.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

JIT_ENABLED = numba is not None and os.environ.get("NCRB_DISABLE_JIT", "0") not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True, nogil=True``; identity decorator when numba is absent."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if numba is None:  # pragma: no cover
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def select(jit_fn, numpy_fn):
    return jit_fn if JIT_ENABLED else numpy_fn


def backend_name():
    return "numba" if JIT_ENABLED else "numpy"
