"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 64] [--channels 64] [--size 8]

Prints one row per kernel with the best-of-N time for each backend and the speedup.
"""
import argparse
import timeit

import numpy as np

import dynorm.kernels as kernels
from dynorm.cabn import NormalizerConfig, NormLayerState, normalize
from dynorm.tensor import ChannelStats, FeatureMap


def cases(B, C, S, rng):
    x = rng.normal(size=(B, C, S, S)).astype(np.float32)
    mu = x.mean(axis=(2, 3), dtype=np.float64)
    labels = rng.integers(0, 8, size=B).astype(np.intp)
    mean, std = kernels.available_backends()["python"].group_stats(x, labels, 8)
    g, b = np.ones(C), np.zeros(C)
    A = rng.random((B, B)) < 0.05
    A = A | A.T
    np.fill_diagonal(A, False)
    w = rng.normal(size=(C, C, 3, 3)).astype(np.float32)
    bias = np.zeros(C, np.float32)
    return {
        "instance_means": lambda k: k.instance_means(x),
        "group_stats": lambda k: k.group_stats(x, labels, 8),
        "cosine_matrix": lambda k: k.cosine_matrix(mu),
        "first_neighbors": lambda k: k.first_neighbors(mu),
        "components": lambda k: k.components(A),
        "group_normalize": lambda k: k.group_normalize(x, labels, mean, std, g, b, 1e-5),
        "conv2d 3x3": lambda k: k.conv2d(x[:8], w, bias, 1, 1),
    }


def bench_dyn(B, C, S, rng, repeat):
    """Whole DYN normalization (clustering + CABN) with each backend swapped in."""
    fm = FeatureMap(rng.normal(size=(B, C, S, S)))
    state = NormLayerState.identity(ChannelStats(np.zeros(C), np.ones(C)), NormalizerConfig())
    out = {}
    saved = {n: getattr(kernels, n) for n in kernels.KERNEL_NAMES}
    try:
        for name, impl in kernels.available_backends().items():
            for n in saved:
                setattr(kernels, n, getattr(impl, n))
            out[name] = min(timeit.repeat(lambda: normalize(fm, state), number=1, repeat=repeat))
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--size", type=int, default=8)
    args = ap.parse_args()

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled core not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    names = sorted(backends)
    print(f"B={args.batch} C={args.channels} H=W={args.size}, best of {args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{n + ' (ms)':>15}" for n in names) + f"{'speedup':>10}")
    rows = list(cases(args.batch, args.channels, args.size, rng).items())
    for label, fn in rows:
        t = {n: min(timeit.repeat(lambda: fn(backends[n]), number=1, repeat=args.repeat)) for n in names}
        speed = t["python"] / t["cython"] if "cython" in t else float("nan")
        print(f"{label:<18}" + "".join(f"{t[n] * 1e3:>15.3f}" for n in names) + f"{speed:>9.1f}x")
    t = bench_dyn(args.batch, args.channels, args.size, rng, args.repeat)
    speed = t["python"] / t["cython"] if "cython" in t else float("nan")
    print(f"{'DYN normalize':<18}" + "".join(f"{t[n] * 1e3:>15.3f}" for n in names) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
