"""Numba dispatch.

Set ``LEOCOV_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""

import os

_FLAG = os.environ.get("LEOCOV_DISABLE_NUMBA", "").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

USE_NUMBA = _numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(f):
    """Compile ``f`` in nopython mode, or return it untouched without numba."""
    if _numba is None:  # pragma: no cover
        return f
    # no fastmath: the two kernel paths must agree to round-off
    return _numba.njit(f, cache=True, fastmath=False, nogil=True)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
