"""Numba switch.

Kernels are written in the numba-compatible subset of numpy/Python, so the
same source runs compiled or interpreted. Set ``JOBSHOP_RL_NO_JIT=1`` (or run
without numba installed) to use the interpreted path. The interpreted
function of a compiled kernel stays reachable as ``kernel.py_func``.
"""

import os

_DISABLED = os.environ.get("JOBSHOP_RL_NO_JIT", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def jit(fn=None, **options):
    options.setdefault("nogil", True)

    def wrap(f):
        if not HAS_NUMBA:
            f.py_func = f
            return f
        return _njit(**options)(f)

    return wrap(fn) if fn is not None else wrap


def python_version(kernel):
    return getattr(kernel, "py_func", kernel)
