"""Backend selection for the spatial hot kernels.

The compiled Cython extension is used when available; the NumPy fallback
otherwise. ``KARMA_KERNELS`` overrides the choice: ``auto`` (default),
``cython`` (fail if the extension is missing), or ``python``.
"""

from __future__ import annotations

import os

from . import pykernels

_choice = os.environ.get("KARMA_KERNELS", "auto").lower()
if _choice not in ("auto", "cython", "python"):
    raise ValueError(f"KARMA_KERNELS must be auto|cython|python, got {_choice!r}")

_impl = pykernels
BACKEND = "python"

if _choice in ("auto", "cython"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        _impl = pykernels

depthwise_fwd = _impl.depthwise_fwd
depthwise_bwd = _impl.depthwise_bwd
im2col = _impl.im2col
col2im = _impl.col2im
maxpool_fwd = _impl.maxpool_fwd
maxpool_bwd = _impl.maxpool_bwd

__all__ = [
    "BACKEND",
    "pykernels",
    "depthwise_fwd",
    "depthwise_bwd",
    "im2col",
    "col2im",
    "maxpool_fwd",
    "maxpool_bwd",
]
