"""Hot-loop kernels, compiled when available.

The Cython build (``_speedups``) is preferred; the pure-Python module is used
when the extension is missing or ``WG_PURE_PYTHON`` is set. Both produce
bit-identical results.
"""

from __future__ import annotations

import os

from . import _purepy

if os.environ.get("WG_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _purepy
    BACKEND = "python"
else:
    try:
        from . import _speedups as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _purepy
        BACKEND = "python"

fnv1a64 = _impl.fnv1a64
hash_embed = _impl.hash_embed
cosine = _impl.cosine
scan_cosine = _impl.scan_cosine

__all__ = ["BACKEND", "fnv1a64", "hash_embed", "cosine", "scan_cosine"]
