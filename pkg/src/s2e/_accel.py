"""Numba acceleration switch.

Hot kernels (Connect 4 scanning, labeling flags, lander stepping) are written
as plain-Python numeric functions and compiled with ``numba.njit`` when
available.  Set ``S2E_NO_NUMBA=1`` to force the pure-Python/numpy fallback;
``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("S2E_NO_NUMBA", "").lower() in ("1", "true", "yes")

if _DISABLED:
    NUMBA_ENABLED = False
else:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a hard dep in practice
        NUMBA_ENABLED = False


def maybe_njit(fn):
    """Compile ``fn`` with numba unless the fallback path is selected."""
    if NUMBA_ENABLED:
        from numba import njit

        return njit(cache=True)(fn)
    return fn
