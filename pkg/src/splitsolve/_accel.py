"""Optional numba acceleration.

Kernels are written once as plain Python loops and compiled with
``numba.njit`` when numba is importable and ``SPLITSOLVE_NUMBA`` is not
set to a false value. Every kernel also has a vectorised numpy twin in
:mod:`splitsolve.kernels`; the env flag picks which one the package uses.
"""

from __future__ import annotations

import os

_FALSE = {"0", "false", "no", "off"}

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("SPLITSOLVE_NUMBA", "1").strip().lower() not in _FALSE


def njit(func):
    """Compile ``func`` with numba if available, else return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, fastmath=False)(func)
