"""Numba switch.

Set ``PGP_LQR_DISABLE_NUMBA=1`` before import to run every kernel on its
pure-numpy path.
"""
import os

_FLAG = os.environ.get("PGP_LQR_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and not DISABLED


def maybe_njit(fn):
    """Compile ``fn`` with numba when enabled, else return it unchanged."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn
