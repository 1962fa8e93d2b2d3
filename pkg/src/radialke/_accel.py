"""Numba activation switch.

The hot kernels in :mod:`radialke.kernels` exist twice, once compiled with
numba and once as plain numpy.  Which one backs the public aliases is decided
here, at import time:

* ``RADIALKE_NO_NUMBA=1`` (also ``true``/``yes``/``on``) forces the numpy path;
* if numba is missing or fails to import, the numpy path is used silently.

``USING_NUMBA`` reports the outcome; ``benchmarks/benchmark_kernels.py`` times
both paths side by side.
"""

from __future__ import annotations

import os

_FLAG = "RADIALKE_NO_NUMBA"


def numba_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


USING_NUMBA = False
njit = None

if numba_requested():
    try:
        from numba import njit  # type: ignore[no-redef]

        USING_NUMBA = True
    except Exception:  # pragma: no cover - exercised only without numba installed
        njit = None
        USING_NUMBA = False
