"""Time the hot kernels on both backends and report the speedup.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--dtype float32]

Imports both kernel modules directly (ignoring FUSEMT_BACKEND) so the
comparison always covers the pair. Shapes mirror the desk-scale
training loop: attention rows, output-vocabulary softmax, GRU gate
blocks, and an embedding-sized optimizer update.
"""

import argparse
import time

import numpy as np

from fusemt.backend import pykernels

try:
    from fusemt.backend import _ckernels as ckernels
except ImportError:
    ckernels = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def make_cases(dtype, rng):
    batch, hidden, vocab, src_len = 32, 256, 5000, 60

    att = np.ascontiguousarray(rng.standard_normal((batch, src_len)).astype(dtype))
    logits = np.ascontiguousarray(rng.standard_normal((batch, vocab)).astype(dtype))
    targets = rng.integers(0, vocab, batch)
    probs = pykernels.softmax_rows(logits)
    dnll = np.ones(batch, dtype=dtype)
    ax = np.ascontiguousarray(rng.standard_normal((batch, 3 * hidden)).astype(dtype))
    ah = np.ascontiguousarray(rng.standard_normal((batch, 3 * hidden)).astype(dtype))
    h_prev = np.ascontiguousarray(rng.standard_normal((batch, hidden)).astype(dtype))
    dh = np.ascontiguousarray(rng.standard_normal((batch, hidden)).astype(dtype))
    _, z, r, c = pykernels.gru_gates(ax, ah, h_prev)
    param = np.ascontiguousarray(rng.standard_normal((vocab, hidden)).astype(dtype))
    grad = np.ascontiguousarray(rng.standard_normal((vocab, hidden)).astype(dtype))
    accum = np.full((vocab, hidden), 0.1, dtype=dtype)

    return [
        ("softmax_rows", f"({batch},{src_len})",
         lambda k: k.softmax_rows(att)),
        ("softmax_xent", f"({batch},{vocab})",
         lambda k: k.softmax_xent(logits, targets)),
        ("xent_backward", f"({batch},{vocab})",
         lambda k: k.xent_backward(probs, targets, dnll)),
        ("gru_gates", f"({batch},{3 * hidden})",
         lambda k: k.gru_gates(ax, ah, h_prev)),
        ("gru_gates_backward", f"({batch},{3 * hidden})",
         lambda k: k.gru_gates_backward(dh, z, r, c, ah, h_prev)),
        ("adagrad_step", f"({vocab},{hidden})",
         lambda k: k.adagrad_step(param, grad, accum, 0.01, 1e-8)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=30,
                        help="timing repeats per kernel (best is kept)")
    parser.add_argument("--dtype", choices=["float32", "float64"],
                        default="float32")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = make_cases(np.dtype(args.dtype), rng)

    print(f"dtype={args.dtype} repeats={args.repeats}")
    header = f"{'kernel':<20} {'shape':<14} {'numpy':>10} {'c':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, shape, call in cases:
        t_py = best_of(lambda: call(pykernels), args.repeats)
        if ckernels is None:
            print(f"{name:<20} {shape:<14} {t_py * 1e3:>8.3f}ms {'n/a':>10} {'n/a':>8}")
            continue
        t_c = best_of(lambda: call(ckernels), args.repeats)
        print(f"{name:<20} {shape:<14} {t_py * 1e3:>8.3f}ms {t_c * 1e3:>8.3f}ms "
              f"{t_py / t_c:>7.1f}x")
    if ckernels is None:
        print("compiled backend not built; reinstall to compare")


if __name__ == "__main__":
    main()
