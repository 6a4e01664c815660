"""Numba switch.

Hot kernels are compiled with numba when it is importable and the
``LATENTANON_DISABLE_NUMBA`` environment variable is unset (or ``0``).
Otherwise ``njit`` is a no-op and callers dispatch to the numpy paths.
"""
from __future__ import annotations

import functools
import os

_FLAG = "LATENTANON_DISABLE_NUMBA"

try:
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAVE_NUMBA = False


def numba_disabled() -> bool:
    return os.environ.get(_FLAG, "0").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not numba_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, identity decorator otherwise.

    Compilation is lazy, so decorating is free even when the numpy path is
    the one selected at runtime.
    """
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)

    def deco(f):
        @functools.wraps(f)
        def wrapper(*a, **kw):
            return f(*a, **kw)

        return wrapper

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return deco(args[0])
    return deco


__all__ = ["HAVE_NUMBA", "USE_NUMBA", "njit", "numba_disabled"]
