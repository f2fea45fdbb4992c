"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--number 200]

Both variants are imported directly, so the ``PANTYPING_BACKEND`` flag does not
matter here. The first numba call (compilation or cache load) is excluded.
"""
import argparse
import timeit

import numpy as np

from pantyping import kernels
from pantyping.data import SynthConfig, synth_hierarchy
from pantyping.hierarchy import path_matrices


def cases(rng, T, dw, dh, roots, d):
    X = rng.normal(size=(T, dw))
    W = rng.normal(scale=0.1, size=(4 * dh, dw + dh))
    b = np.zeros(4 * dh)
    h0, c0 = np.zeros(dh), np.zeros(dh)
    idx, lengths, _ = path_matrices(synth_hierarchy(SynthConfig(roots=roots, branching=(2, 1))))
    N = len(lengths)
    E = rng.normal(size=(N, d))
    dout = rng.normal(size=(N, d))
    return {
        "lstm_forward": lambda impl: (lambda: getattr(kernels, f"lstm_forward_{impl}")(X, W, b, h0, c0)),
        "lstm_backward": lambda impl: _lstm_backward(impl, X, W, b, h0, c0, dh),
        "path_product_forward": lambda impl: (
            lambda: getattr(kernels, f"path_product_forward_{impl}")(E, idx, lengths)),
        "path_product_backward": lambda impl: (
            lambda: getattr(kernels, f"path_product_backward_{impl}")(E, idx, lengths, dout)),
    }


def _lstm_backward(impl, X, W, b, h0, c0, dh):
    H, C, G = getattr(kernels, f"lstm_forward_{impl}")(X, W, b, h0, c0)
    dlast = np.ones(dh)
    fn = getattr(kernels, f"lstm_backward_{impl}")
    return lambda: fn(X, W, H, C, G, dlast)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    ap.add_argument("--tokens", type=int, default=10)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--roots", type=int, default=3, help="hierarchy has 5 types per root")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    table = cases(rng, args.tokens, args.dim, args.dim, args.roots, args.dim)
    print(f"{'kernel':<24}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, make in table.items():
        times = {}
        for impl in ("numpy", "numba"):
            fn = make(impl)
            fn()  # warm-up / compile
            best = min(timeit.repeat(fn, repeat=args.repeat, number=args.number))
            times[impl] = best / args.number * 1e6
        print(f"{name:<24}{times['numpy']:>12.1f}{times['numba']:>12.1f}{times['numpy'] / times['numba']:>9.1f}x")


if __name__ == "__main__":
    main()
