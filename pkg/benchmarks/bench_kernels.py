"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from mdksim import _pykernels
from mdksim.kernels import available_backends


def cases(rng):
    w = rng.integers(-127, 128, (512, 1024), dtype=np.int8)
    v = rng.integers(-127, 128, 1024, dtype=np.int8)
    x = rng.normal(size=1024)
    k = rng.normal(size=(1024, 64))
    vv = rng.normal(size=(1024, 64))
    q = rng.normal(size=64)
    return {
        "matvec_i8 512x1024": lambda m: m.matvec_i8(w, v),
        "sum_ltr 1024": lambda m: m.sum_ltr(x),
        "attend_head t=576 hd=64": lambda m: m.attend_head(k, vv, q, 0.125, 576, 576),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    backends = available_backends()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s}" + "".join(f"{b:>14s}" for b in backends) + "   speed-up")
    for name, fn in cases(rng).items():
        ref = fn(_pykernels)
        times = {}
        for b, mod in backends.items():
            out = fn(mod)
            assert np.array_equal(out, ref), f"{name}: {b} disagrees with python"
            times[b] = min(timeit.repeat(lambda: fn(mod), number=args.repeat, repeat=3)) / args.repeat
        sp = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:28s}" + "".join(f"{times[b] * 1e6:12.1f}us" for b in backends) + f"   {sp:8.2f}x")


if __name__ == "__main__":
    main()
