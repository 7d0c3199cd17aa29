"""Backend selection for the hot numeric kernels.

Set ``NLFILT_BACKEND=numpy`` to force the pure-numpy path; the default is
``numba`` when it can be imported. The choice is read once, at import time.
"""

import os

_requested = os.environ.get("NLFILT_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise RuntimeError(f"NLFILT_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    if _requested == "numpy":
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def jit(func):
    """Compile ``func`` with numba when available, otherwise return it untouched."""
    if HAVE_NUMBA:
        return _njit(cache=True, nogil=True)(func)
    return func
