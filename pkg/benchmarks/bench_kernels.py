"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel and problem size with the best-of-N wall time of
each backend, their ratio, and the largest absolute difference between the
two outputs.
"""
import argparse
import sys
import timeit

import numpy as np

from gazeattn import kernels


def cases(rng):
    for n, h, cin, cout in ((32, 8, 3, 16), (32, 16, 16, 16), (8, 32, 16, 32)):
        x = rng.normal(size=(n, h, h, cin))
        w = rng.normal(size=(3, 3, cin, cout))
        b = rng.normal(size=cout)
        d = rng.normal(size=(n, h, h, cout))
        shape = f"N={n} {h}x{h} {cin}->{cout}"
        yield "conv2d_forward", shape, lambda m, x=x, w=w, b=b: m.conv2d_forward(x, w, b)
        yield "conv2d_grad_input", shape, lambda m, d=d, w=w: m.conv2d_grad_input(d, w)
        yield "conv2d_grad_weight", shape, lambda m, x=x, d=d: m.conv2d_grad_weight(x, d, 3, 3)
    for n_pos, n_neg in ((16, 256), (64, 4096), (256, 65536)):
        pos = rng.integers(0, 50, n_pos).astype(np.float64)
        neg = rng.integers(0, 50, n_neg).astype(np.float64)
        yield "rank_counts", f"{n_pos} pos x {n_neg} neg", lambda m, p=pos, q=neg: np.asarray(m.rank_counts(p, q))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = kernels.backends()
    if "cython" not in backends:
        print("compiled extension not available; rebuild with `pip install -e . --no-build-isolation`",
              file=sys.stderr)
        return 1
    cy, py = backends["cython"], backends["python"]
    print(f"{'kernel':<20} {'size':<26} {'cython ms':>10} {'numpy ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, size, fn in cases(np.random.default_rng(0)):
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(np.asarray(fn(cy), dtype=np.float64) - np.asarray(fn(py), dtype=np.float64))))
        print(f"{name:<20} {size:<26} {1e3 * t_cy:>10.3f} {1e3 * t_py:>10.3f} {t_py / t_cy:>7.2f}x {diff:>11.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
