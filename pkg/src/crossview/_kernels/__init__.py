"""Kernel backend selection.

The heavy inner loops (Jacobi rotation sweeps, top-k selection) exist
twice: a Cython extension (``_native``) and a NumPy fallback
(``_fallback``). The compiled module is preferred when importable; set
``CROSSVIEW_PURE_PYTHON=1`` to force the fallback. Both produce identical
results, so the choice only affects speed.
"""

from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

from . import _fallback


def _want_pure_python() -> bool:
    return os.environ.get("CROSSVIEW_PURE_PYTHON", "") not in ("", "0")


if _want_pure_python():
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"
        logger.debug("compiled kernels unavailable, using NumPy fallback")

jacobi_cycle = _impl.jacobi_cycle
topk_select = _impl.topk_select


def load_backend(name: str):
    """Return a specific backend module ("native" or "python").

    Used by the benchmark and the parity tests; raises ImportError when the
    compiled extension was not built.
    """
    if name == "python":
        return _fallback
    if name == "native":
        from . import _native

        return _native
    raise ValueError(f"unknown kernel backend: {name!r}")
