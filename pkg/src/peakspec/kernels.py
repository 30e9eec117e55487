"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
fallback is used.  Setting ``PEAKSPEC_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("PEAKSPEC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py
else:
    _impl = _kernels_py

sturm_count = _impl.sturm_count
bisect_eigenvalues = _impl.bisect_eigenvalues
tridiag_solve = _impl.tridiag_solve

__all__ = ["BACKEND", "sturm_count", "bisect_eigenvalues", "tridiag_solve"]
