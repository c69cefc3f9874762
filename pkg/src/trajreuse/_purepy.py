"""Pure-Python kernels. Bit-for-bit twin of ``_speedups.pyx``.

Floating point work is written as explicit left-to-right loops so that the
accumulation order matches the compiled kernels exactly.
"""

from __future__ import annotations

import math
from array import array
from collections.abc import Sequence

_MASK = 0xFFFFFFFFFFFFFFFF
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    # murmur3 finalizer; FNV-1a alone leaves weak low bits for small moduli
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & _MASK
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & _MASK
    h ^= h >> 33
    return h


def hash_embed(tokens: Sequence[str], dim: int) -> tuple[float, ...]:
    counts = [0] * dim
    for tok in tokens:
        counts[fnv1a64(tok.encode("utf-8")) % dim] += 1
    ss = 0.0
    for c in counts:
        ss += float(c) * float(c)
    if ss == 0.0:
        return tuple(0.0 for _ in range(dim))
    norm = math.sqrt(ss)
    return tuple(float(c) / norm for c in counts)


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} != {len(b)}")
    dot = 0.0
    aa = 0.0
    bb = 0.0
    for i in range(len(a)):
        x = a[i]
        y = b[i]
        dot += x * y
        aa += x * x
        bb += y * y
    if aa == 0.0 or bb == 0.0:
        return 0.0
    s = dot / (math.sqrt(aa) * math.sqrt(bb))
    if s > 1.0:
        return 1.0
    if s < -1.0:
        return -1.0
    return s


def scan_cosine(query: Sequence[float], flat: array, dim: int) -> list[float]:
    """Cosine of ``query`` against every row of a row-major ``flat`` matrix."""
    if len(query) != dim:
        raise ValueError(f"dimension mismatch: {len(query)} != {dim}")
    n = len(flat) // dim
    out = []
    for r in range(n):
        base = r * dim
        dot = 0.0
        aa = 0.0
        bb = 0.0
        for i in range(dim):
            x = query[i]
            y = flat[base + i]
            dot += x * y
            aa += x * x
            bb += y * y
        if aa == 0.0 or bb == 0.0:
            out.append(0.0)
            continue
        s = dot / (math.sqrt(aa) * math.sqrt(bb))
        if s > 1.0:
            s = 1.0
        elif s < -1.0:
            s = -1.0
        out.append(s)
    return out
