"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
reference implementation.  Setting ``BLOWUP_LAB_PURE=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("BLOWUP_LAB_PURE", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

mehler_matrix = _impl.mehler_matrix
nonlinear_b = _impl.nonlinear_b
reaction = _impl.reaction

__all__ = ["BACKEND", "mehler_matrix", "nonlinear_b", "reaction"]
