# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Must stay bit-identical to ``_purepy``."""

from libc.math cimport sqrt
from libc.stdint cimport uint64_t

from array import array

cdef uint64_t _FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t _FNV_PRIME = 0x100000001B3ULL


cdef inline uint64_t _fnv(const unsigned char[:] data) nogil:
    cdef uint64_t h = _FNV_OFFSET
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        h ^= data[i]
        h *= _FNV_PRIME
    h ^= h >> 33
    h *= 0xFF51AFD7ED558CCDULL
    h ^= h >> 33
    h *= 0xC4CEB9FE1A85EC53ULL
    h ^= h >> 33
    return h


def fnv1a64(bytes data):
    if len(data) == 0:
        return _fnv_empty()
    return _fnv(data)


cdef uint64_t _fnv_empty():
    cdef uint64_t h = _FNV_OFFSET
    h ^= h >> 33
    h *= 0xFF51AFD7ED558CCDULL
    h ^= h >> 33
    h *= 0xC4CEB9FE1A85EC53ULL
    h ^= h >> 33
    return h


def hash_embed(tokens, int dim):
    cdef long[:] counts = array("l", [0]) * dim
    cdef bytes raw
    cdef uint64_t h
    for tok in tokens:
        raw = tok.encode("utf-8")
        h = _fnv(raw) if len(raw) else _fnv_empty()
        counts[h % <uint64_t>dim] += 1
    cdef double ss = 0.0
    cdef double c
    cdef Py_ssize_t i
    for i in range(dim):
        c = <double>counts[i]
        ss += c * c
    if ss == 0.0:
        return tuple([0.0] * dim)
    cdef double norm = sqrt(ss)
    return tuple([<double>counts[i] / norm for i in range(dim)])


def cosine(a, b):
    cdef Py_ssize_t n = len(a)
    if n != len(b):
        raise ValueError(f"dimension mismatch: {n} != {len(b)}")
    cdef double[:] va = array("d", a)
    cdef double[:] vb = array("d", b)
    cdef double dot = 0.0, aa = 0.0, bb = 0.0, x, y, s
    cdef Py_ssize_t i
    for i in range(n):
        x = va[i]
        y = vb[i]
        dot += x * y
        aa += x * x
        bb += y * y
    if aa == 0.0 or bb == 0.0:
        return 0.0
    s = dot / (sqrt(aa) * sqrt(bb))
    if s > 1.0:
        return 1.0
    if s < -1.0:
        return -1.0
    return s


def scan_cosine(query, flat, int dim):
    if len(query) != dim:
        raise ValueError(f"dimension mismatch: {len(query)} != {dim}")
    cdef double[:] q = array("d", query)
    cdef double[:] m = flat
    cdef Py_ssize_t n = m.shape[0] // dim
    cdef Py_ssize_t r, i, base
    cdef double dot, aa, bb, x, y, s
    out = []
    for r in range(n):
        base = r * dim
        dot = 0.0
        aa = 0.0
        bb = 0.0
        for i in range(dim):
            x = q[i]
            y = m[base + i]
            dot += x * y
            aa += x * x
            bb += y * y
        if aa == 0.0 or bb == 0.0:
            out.append(0.0)
            continue
        s = dot / (sqrt(aa) * sqrt(bb))
        if s > 1.0:
            s = 1.0
        elif s < -1.0:
            s = -1.0
        out.append(s)
    return out
