"""Kernel backend selection.

Hot per-record loops (auction placement, pricing, clicks) are compiled with
numba by default.  Setting the environment variable ``CFADS_NO_NUMBA=1``
before import selects a pure-Python/numpy fallback running the exact same
code uncompiled, which is slow but dependency-light and bit-identical.
"""

import os

USE_NUMBA = os.environ.get("CFADS_NO_NUMBA", "0") != "1"

if USE_NUMBA:
    from numba import njit as _njit

    def kernel(fn):
        return _njit(cache=True, nogil=True)(fn)
else:
    def kernel(fn):
        return fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
