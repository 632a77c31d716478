"""Time the compiled and pure-Python DP kernels on the same inputs.

    python benchmarks/bench_kernels.py [--chunk-len 40] [--stems 60] [--repeat 3]

Prints the best-of-``repeat`` wall time per kernel and backend plus the
speed-up, and checks that both backends return matching outputs.
"""

import argparse
import math
import time

import numpy as np

from decipher import kernels
from decipher.alignment import EncodedVocab, Stem


def make_inputs(chunk_len, n_stems, n_known=12, n_lost=12, length_range=(4, 8), seed=0):
    rng = np.random.default_rng(seed)
    known = tuple(f"k{i}" for i in range(n_known))
    stems = [Stem(tuple(known[i] for i in rng.integers(0, n_known, rng.integers(4, 8))))
             for _ in range(n_stems)]
    vocab = EncodedVocab.build(stems, known)
    w = rng.random((n_known, n_lost + 1)) + 0.05
    log_map = np.ascontiguousarray(np.log(w / w.sum(axis=1, keepdims=True)))
    x = rng.integers(0, n_lost, chunk_len).astype(np.int32)
    return x, vocab, log_map, length_range


def best_time(fn, repeat):
    best = math.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(impl, x, vocab, log_map, length_range, repeat):
    lo, hi = length_range
    log_a = math.log(0.03)
    times = {}
    times["align_chunk"], (V, bp) = best_time(
        lambda: impl.align_chunk(x, vocab.phones, vocab.offsets, log_map, log_a, lo, hi, True), repeat)
    dV = np.where(np.isfinite(V), 1.0, 0.0)
    times["align_backward"], _ = best_time(
        lambda: impl.align_backward(x, vocab.phones, vocab.offsets, bp, dV, lo, np.zeros_like(log_map)),
        repeat)
    with np.errstate(divide="ignore"):
        log_span = np.log(np.exp(V).mean(axis=1))
    log_prior = np.full(hi - lo + 2, -math.log(hi - lo + 2))
    log_p0 = -math.log(log_map.shape[1] - 1)
    times["segment_forward"], (a, q, c) = best_time(
        lambda: impl.segment_forward(log_span, log_prior, log_p0, lo), repeat)
    times["segment_backward"], _ = best_time(
        lambda: impl.segment_backward(log_span, log_prior, log_p0, lo, a, q, c, 0.0, 1.0, 0.5), repeat)
    return times, V


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--chunk-len", type=int, default=40)
    p.add_argument("--stems", type=int, default=60)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    inputs = make_inputs(args.chunk_len, args.stems)
    results = {}
    outputs = {}
    for name in sorted(kernels.BACKENDS):
        results[name], outputs[name] = bench(kernels.BACKENDS[name], *inputs, args.repeat)

    print(f"chunk length {args.chunk_len}, {args.stems} stems, best of {args.repeat}")
    names = sorted(results)
    print("kernel".ljust(18) + "".join(n.rjust(12) for n in names) + ("speed-up".rjust(10) if len(names) > 1 else ""))
    for kernel in results[names[0]]:
        row = kernel.ljust(18) + "".join(f"{results[n][kernel] * 1e3:10.3f}ms" for n in names)
        if "cython" in results and "python" in results:
            row += f"{results['python'][kernel] / results['cython'][kernel]:9.1f}x"
        print(row)
    if len(outputs) > 1:
        ref = outputs["python"]
        for name, V in outputs.items():
            if not np.array_equal(V, ref):
                raise SystemExit(f"{name} alignment scores differ from the reference")
        print("outputs match")


if __name__ == "__main__":
    main()
