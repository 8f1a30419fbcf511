"""Timing comparison of the compiled and pure-Python loop kernels.

Runs the same coded-loop simulation on every available backend, checks
that the traces are bit-identical, and prints steps/s plus the speedup
of the compiled kernel over the fallback.

Usage: python3 benchmarks/bench_kernels.py [--steps N] [--repeat R]
"""

import argparse
import math
import time

import numpy as np

from quantlqg.harness import config_from_dict, synthesize_system, warmup_pmf
from quantlqg.loop import available_backends, run_loop

SCALAR = {
    "m": 1, "u": 1,
    "A": [2.0], "B": [1.0], "W": [1.0], "Q": [1.0], "Phi": [1.0],
    "gamma": 6.354101966249685, "delta": 1.0,
    "seed": 17, "warmup_steps": 20_000, "eval_steps": 1,
}

TWO_MODE = {
    "m": 2, "u": 2,
    "A": [1.1, 0.2, 0.0, 0.8],
    "B": [1.0, 0.0, 0.0, 1.0],
    "W": [1.0, 0.0, 0.0, 1.0],
    "Q": [1.0, 0.0, 0.0, 1.0],
    "Phi": [1.0, 0.0, 0.0, 1.0],
    "gamma": 4.767023394647365, "delta": 1.0,
    "seed": 17, "warmup_steps": 20_000, "eval_steps": 1,
}


def prepare(raw):
    config = config_from_dict(raw)
    plant = config.to_plant()
    gains, _, synthesis = synthesize_system(plant, config.gamma, config.delta)
    pmf = warmup_pmf(config, plant=plant, gains=gains, synthesis=synthesis)
    return plant, gains, synthesis, pmf


def time_backend(parts, backend, steps, repeat):
    plant, gains, synthesis, pmf = parts
    best = math.inf
    trace = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        trace = run_loop(plant, gains, synthesis, pmf, seed=99, horizon=steps,
                         backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, trace


def same_trace(a, b):
    return (np.array_equal(a.X, b.X) and np.array_equal(a.U, b.U)
            and np.array_equal(a.Q, b.Q) and np.array_equal(a.lengths, b.lengths))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; timing the python fallback only")

    for name, raw in (("scalar plant", SCALAR), ("two-mode plant", TWO_MODE)):
        parts = prepare(raw)
        print(f"\n{name}, {args.steps} steps, best of {args.repeat}:")
        results = {}
        for backend in backends:
            secs, trace = time_backend(parts, backend, args.steps, args.repeat)
            results[backend] = (secs, trace)
            print(f"  {backend:7s} {secs:8.3f} s   {args.steps / secs:12,.0f} steps/s")
        if "cython" in results and "python" in results:
            c_secs, c_trace = results["cython"]
            p_secs, p_trace = results["python"]
            if not same_trace(c_trace, p_trace):
                raise SystemExit("backends disagree: traces are not bit-identical")
            print(f"  traces bit-identical; speedup {p_secs / c_secs:.1f}x")


if __name__ == "__main__":
    main()
