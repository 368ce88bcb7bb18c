"""Numba acceleration switch for the hot numeric kernels.

Kernels in :mod:`nricci.kernels` are written in nopython-compatible numpy
style so the same source runs both ways. By default they compile with
numba; setting ``NRICCI_NO_NUMBA=1`` (or numba being absent) selects the
pure-numpy fallback path instead. ``benchmarks/bench_accel.py`` compares
the two.
"""

import os

DISABLE_ENV = "NRICCI_NO_NUMBA"


def _resolve_numba_enabled() -> bool:
    if os.environ.get(DISABLE_ENV, "").strip().lower() in ("1", "true", "yes"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _resolve_numba_enabled()

if NUMBA_ENABLED:
    from numba import njit
else:
    def njit(*args, **kwargs):
        """No-op stand-in for numba.njit: returns the function unchanged."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap
