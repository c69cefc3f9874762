"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py --rows 2000 --repeat 5
"""

from __future__ import annotations

import argparse
import random
import timeit
from array import array

from trajreuse import _purepy

try:
    from trajreuse import _speedups
except ImportError:
    _speedups = None


def workloads(rows: int, dim: int, seed: int):
    rng = random.Random(seed)
    words = [f"w{i}" for i in range(500)]
    sentences = [[rng.choice(words) for _ in range(12)] for _ in range(200)]
    blobs = [" ".join(s).encode() for s in sentences]
    vecs = [[rng.gauss(0, 1) for _ in range(dim)] for _ in range(rows)]
    flat = array("d", (x for v in vecs for x in v))
    query = vecs[0]
    return {
        "fnv1a64": lambda m: [m.fnv1a64(b) for b in blobs],
        "hash_embed": lambda m: [m.hash_embed(s, dim) for s in sentences],
        "cosine": lambda m: [m.cosine(query, v) for v in vecs[:200]],
        "scan_cosine": lambda m: m.scan_cosine(query, flat, dim),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--dim", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if _speedups is None:
        print("compiled extension not built; only the Python timings are shown")
    print(f"{'kernel':<12} {'python ms':>10} {'cython ms':>10} {'speedup':>8}  same")
    for name, fn in workloads(args.rows, args.dim, args.seed).items():
        py = min(timeit.repeat(lambda: fn(_purepy), number=1, repeat=args.repeat)) * 1e3
        if _speedups is None:
            print(f"{name:<12} {py:>10.3f}")
            continue
        cy = min(timeit.repeat(lambda: fn(_speedups), number=1, repeat=args.repeat)) * 1e3
        same = fn(_purepy) == fn(_speedups)
        print(f"{name:<12} {py:>10.3f} {cy:>10.3f} {py / cy:>7.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
