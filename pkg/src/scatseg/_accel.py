"""numba switch.

Set ``SCAT_NUMBA=0`` before import to run every kernel through its pure-numpy
fallback. numba is optional; when it is missing the fallback is used as well.
"""
import os

_flag = os.environ.get("SCAT_NUMBA", "1").strip().lower()
_wanted = _flag not in ("0", "false", "no", "off")

try:
    if not _wanted:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(fn):
    """``numba.njit(cache=True)`` when enabled, else ``None``."""
    if not HAVE_NUMBA:
        return None
    return _njit(cache=True, nogil=True)(fn)
