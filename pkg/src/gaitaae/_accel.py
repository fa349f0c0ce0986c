"""Optional numba acceleration.

Kernels are written once as plain Python loops and compiled with ``njit``
when numba is importable and ``GAITAAE_DISABLE_NUMBA`` is not set to a
truthy value. Every kernel also has a vectorized numpy twin; callers pick
between the two through :data:`USE_NUMBA`.
"""

import os

_DISABLED = os.environ.get("GAITAAE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched."""
    if not HAVE_NUMBA:
        return func
    return _njit(cache=True, nogil=True)(func)
