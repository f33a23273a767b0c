"""Numba availability and backend selection.

Set ``CATGRAD_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""
import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAS_NUMBA = False

_FALSY = {"", "0", "false", "no", "off"}


def numba_disabled_by_env():
    return os.environ.get("CATGRAD_DISABLE_NUMBA", "").strip().lower() not in _FALSY


USE_NUMBA = HAS_NUMBA and not numba_disabled_by_env()


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched without numba."""
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
