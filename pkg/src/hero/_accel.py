"""Numba switch.

Hot kernels are written once as plain Python loops and compiled with
``numba.njit`` unless ``HERO_DISABLE_NUMBA=1`` is set (or numba is missing),
in which case the callers use the vectorized numpy fallbacks instead.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def _flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = numba is not None and not _flag("HERO_DISABLE_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, otherwise the identity decorator."""
    if USE_NUMBA:
        return numba.njit(*args, cache=True, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
