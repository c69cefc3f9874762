from __future__ import annotations

import math
import random
from array import array

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajreuse import _purepy, kernels

M64 = 0xFFFFFFFFFFFFFFFF

# published FNV-1a 64 test vectors (before the finalizer)
FNV1A_VECTORS = {b"": 0xCBF29CE484222325, b"a": 0xAF63DC4C8601EC8C, b"foobar": 0x85944171F73967E8}


def fnv1a_raw(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & M64
    return h


def fmix64(h: int) -> int:
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & M64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & M64
    return h ^ (h >> 33)


def test_oracle_matches_published_vectors():
    for data, expected in FNV1A_VECTORS.items():
        assert fnv1a_raw(data) == expected


@pytest.mark.parametrize("data", list(FNV1A_VECTORS) + [b"trajectory", "été".encode()])
def test_hash_is_fnv1a_then_finalizer(data):
    assert kernels.fnv1a64(data) == fmix64(fnv1a_raw(data))
    assert _purepy.fnv1a64(data) == fmix64(fnv1a_raw(data))


@settings(max_examples=200)
@given(st.binary(max_size=64))
def test_hash_backends_agree(data):
    assert kernels.fnv1a64(data) == _purepy.fnv1a64(data)


@settings(max_examples=100)
@given(st.lists(st.text(min_size=1, max_size=8), max_size=12), st.sampled_from([8, 16, 256]))
def test_hash_embed_backends_bit_identical(tokens, dim):
    assert kernels.hash_embed(tokens, dim) == _purepy.hash_embed(tokens, dim)


def test_hash_embed_counts_buckets():
    dim = 64
    tokens = ["a", "b", "a"]
    counts = [0] * dim
    for t in tokens:
        counts[fmix64(fnv1a_raw(t.encode())) % dim] += 1
    norm = math.sqrt(sum(c * c for c in counts))
    expected = tuple(c / norm for c in counts)
    got = kernels.hash_embed(tokens, dim)
    assert all(abs(x - y) < 1e-15 for x, y in zip(got, expected))


def test_hash_embed_of_nothing_is_zero():
    assert kernels.hash_embed([], 8) == (0.0,) * 8


finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=200)
@given(st.integers(1, 16).flatmap(lambda n: st.tuples(st.lists(finite, min_size=n, max_size=n),
                                                        st.lists(finite, min_size=n, max_size=n))))
def test_cosine_backends_bit_identical(pair):
    a, b = pair
    assert kernels.cosine(a, b) == _purepy.cosine(a, b)


def test_scan_matches_rowwise_cosine():
    r = random.Random(5)
    dim = 12
    rows = [[r.uniform(-1, 1) for _ in range(dim)] for _ in range(40)]
    rows.append([0.0] * dim)
    q = [r.uniform(-1, 1) for _ in range(dim)]
    flat = array("d", [x for row in rows for x in row])
    got = kernels.scan_cosine(q, flat, dim)
    assert got == _purepy.scan_cosine(q, flat, dim)
    assert got == [kernels.cosine(q, row) for row in rows]
    assert got[-1] == 0.0


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        kernels.cosine([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        kernels.scan_cosine([1.0], array("d", [1.0, 2.0]), 2)


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
