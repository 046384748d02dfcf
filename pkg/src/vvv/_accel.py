"""Backend selection for the numeric kernels.

Numba is used when importable unless ``VVV_NO_NUMBA`` is set to a truthy
value, in which case every kernel falls back to its pure-numpy twin.
"""
import os

_FLAG = os.environ.get("VVV_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def njit(fn):
    """Compile ``fn`` with numba when available, else return it untouched."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


def backend():
    return "numba" if USE_NUMBA else "numpy"
