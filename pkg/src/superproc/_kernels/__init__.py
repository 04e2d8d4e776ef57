"""Path-simulation kernels: compiled core with a pure-Python fallback.

The compiled extension is preferred when the build produced it; otherwise
the fallback is selected at import time.  Both expose the same
``simulate_chunk`` and produce bit-identical ensembles, which
``benchmarks/bench_kernels.py`` and the kernel tests verify.
"""

from __future__ import annotations

from . import fallback

try:
    from . import _euler as compiled
except ImportError:  # pure-python install
    compiled = None

active = compiled if compiled is not None else fallback
HAVE_COMPILED = compiled is not None


def backend_name() -> str:
    return "compiled" if HAVE_COMPILED else "fallback"
