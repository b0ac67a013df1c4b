"""Benchmark the compiled forward/backward kernels against the numpy
fallback on the shapes the training loop actually uses.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--batch N ...]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fedledger.fl.backend import get_kernels


def time_call(fn, args, repeats: int) -> float:
    """Best-of-repeats wall time in seconds; best filters scheduler noise."""
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def logistic_args(rng, batch: int, n_features: int, n_classes: int):
    W = rng.normal(0.0, 0.5, (n_classes, n_features))
    b = rng.normal(0.0, 0.5, n_classes)
    X = rng.normal(0.0, 1.0, (batch, n_features))
    y = rng.integers(0, n_classes, batch)
    return W, b, X, y


def mlp_args(rng, batch: int, n_features: int, n_classes: int, hidden: int):
    W1 = rng.normal(0.0, 0.5, (hidden, n_features))
    b1 = rng.normal(0.0, 0.5, hidden)
    W2 = rng.normal(0.0, 0.5, (n_classes, hidden))
    b2 = rng.normal(0.0, 0.5, n_classes)
    X = rng.normal(0.0, 1.0, (batch, n_features))
    y = rng.integers(0, n_classes, batch)
    return W1, b1, W2, b2, X, y


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--batch", type=int, nargs="*", default=[32, 256, 1440])
    parser.add_argument("--features", type=int, default=64)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--hidden", type=int, default=32)
    opts = parser.parse_args()

    compiled = get_kernels()
    fallback = get_kernels(pure_python=True)
    if compiled.BACKEND == fallback.BACKEND:
        print("compiled extension not available; timing the fallback against itself")

    cases = []
    rng = np.random.default_rng(0)
    for batch in opts.batch:
        cases.append(
            (f"logistic fwd+bwd  batch={batch:>5}", "logistic_forward_backward",
             logistic_args(rng, batch, opts.features, opts.classes))
        )
        cases.append(
            (f"mlp      fwd+bwd  batch={batch:>5}", "mlp_forward_backward",
             mlp_args(rng, batch, opts.features, opts.classes, opts.hidden))
        )

    header = f"{'case':<32} {fallback.BACKEND:>12} {compiled.BACKEND:>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for label, fn_name, args in cases:
        # each backend mutates nothing but its own temporaries; hand each
        # a fresh copy anyway so neither can skew the other's inputs
        base = time_call(getattr(fallback, fn_name), tuple(np.copy(a) for a in args), opts.repeats)
        fast = time_call(getattr(compiled, fn_name), tuple(np.copy(a) for a in args), opts.repeats)
        print(f"{label:<32} {base * 1e6:>10.1f}us {fast * 1e6:>10.1f}us {base / fast:>8.2f}x")


if __name__ == "__main__":
    main()
