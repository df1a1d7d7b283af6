"""Kernel backend selection.

The hot inner loops (tridiagonal solves, stencil matvecs, characteristic
backtraces, multilinear sampling) exist twice: a Cython extension
(``_core``) and a vectorized numpy fallback (``pure``).  The compiled
backend is picked at import when available; set MIXFLOW_PURE=1 to force
the fallback.  ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import pure

if os.environ.get("MIXFLOW_PURE", "") not in ("", "0"):
    backend = pure
else:
    try:
        from . import _core as backend  # type: ignore[no-redef]
    except ImportError:
        backend = pure


def backend_name() -> str:
    return backend.NAME
