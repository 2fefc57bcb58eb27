#!/usr/bin/env python3
"""Compare the compiled convolution kernels against the numpy fallback.

Times forward, input-gradient, and kernel-gradient passes on shapes drawn
from the small-LeNet training loop. Run after building the extension:

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import importlib
import time

import numpy as np

from dustbin_lab.kernels import pure

try:
    compiled = importlib.import_module("dustbin_lab.kernels._convcore")
except ImportError:
    compiled = None

SHAPES = [
    # (name, batch, in channels, H, W, filters, kernel)
    ("conv1 28x28", 32, 1, 28, 28, 32, 5),
    ("conv2 24x24", 32, 32, 24, 24, 32, 5),
    ("conv3 20x20", 32, 32, 20, 20, 64, 5),
    ("conv1 14x14", 16, 1, 14, 14, 32, 5),
]


def time_call(fn, repeats):
    fn()  # warmup
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(impl, n, c, h, w, f, k, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, c, h, w))
    kern = rng.normal(size=(f, c, k, k))
    out = impl.conv2d_forward(x, kern, 1, 0, 0)
    gout = rng.normal(size=out.shape)
    fwd = time_call(lambda: impl.conv2d_forward(x, kern, 1, 0, 0), repeats)
    bwd_in = time_call(
        lambda: impl.conv2d_backward_input(gout, kern, (h, w), 1, 0, 0), repeats
    )
    bwd_k = time_call(
        lambda: impl.conv2d_backward_kernels(gout, x, kern.shape, 1, 0, 0), repeats
    )
    return fwd, bwd_in, bwd_k


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if compiled is None:
        print("compiled extension not built; only timing the numpy fallback")
    header = f"{'shape':<14} {'pass':<9} {'numpy (ms)':>11}"
    if compiled is not None:
        header += f" {'compiled (ms)':>14} {'ratio':>7}"
    print(header)
    print("-" * len(header))
    for name, n, c, h, w, f, k in SHAPES:
        pure_times = bench(pure, n, c, h, w, f, k, args.repeats)
        comp_times = (
            bench(compiled, n, c, h, w, f, k, args.repeats) if compiled else None
        )
        for i, label in enumerate(("forward", "grad-in", "grad-kern")):
            line = f"{name:<14} {label:<9} {pure_times[i] * 1e3:>11.2f}"
            if comp_times:
                ratio = pure_times[i] / comp_times[i]
                line += f" {comp_times[i] * 1e3:>14.2f} {ratio:>6.2f}x"
            print(line)


if __name__ == "__main__":
    main()
