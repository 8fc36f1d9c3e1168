"""Time the compiled and numpy kernel backends on representative shapes.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from stlrep._kernels import available_backends


def cases(rng):
    xp = rng.normal(size=(16, 34, 34, 16))
    k = rng.normal(size=(3, 3, 16, 32))
    up = rng.normal(size=(16, 32, 32, 32))
    pool_in = rng.normal(size=(16, 32, 32, 32))
    sym = rng.normal(size=(120, 120))
    sym = sym + sym.T
    X = rng.normal(size=(400, 12))
    y = rng.integers(0, 7, size=400)
    w = np.ones(400)
    return {
        "conv2d_forward 16x32x32 16->32": lambda b: b.conv2d_forward(xp, k, 1),
        "conv2d_backward 16x32x32 16->32": lambda b: b.conv2d_backward(xp, k, up, 1),
        "maxpool2x2_forward 16x32x32x32": lambda b: b.maxpool2x2_forward(pool_in),
        "jacobi_eigh 120x120": lambda b: b.jacobi_eigh(sym.copy(), 1e-10, 100),
        "best_split 400x12, 7 classes": lambda b: b.best_split(X, y, w, 7),
    }


def bench(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = available_backends()
    names = list(backends)
    print(f"{'kernel':36s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        t = [bench(lambda: fn(backends[n]), args.repeat) for n in names]
        row = f"{label:36s}" + "".join(f"{1e3 * v:10.2f}ms" for v in t)
        if len(t) > 1:
            row += f"{t[0] / t[1]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
