"""Time the compiled and pure-Python cell kernels on the same simulated hours.

Usage: ``python benchmarks/bench_kernels.py [--hours 3] [--steps 1800]``
"""

import argparse
import time

import numpy as np

from battmpc import kernel, market, params
from battmpc.cell import CellState
from battmpc.plant import HourlyCommitment, SimConfig, simulate_hour


def time_backend(name, hours, p, alpha, repeats):
    cfg = SimConfig(steps=alpha.shape[1], backend=name)
    best = np.inf
    for _ in range(repeats):
        x = CellState.half_charged(p)
        t0 = time.perf_counter()
        for h in range(hours):
            tr = simulate_hour(x, HourlyCommitment(2.0, 0.0, 0.0), alpha[h], cfg, p)
            x = tr.end
        best = min(best, time.perf_counter() - t0)
    return best, x


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hours", type=int, default=3)
    ap.add_argument("--steps", type=int, default=1800)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    p = params.default()
    alpha = market.synth_fr(1, args.hours, args.steps)
    results = {}
    for name in kernel.available_backends():
        results[name] = time_backend(name, args.hours, p, alpha, args.repeats)
        sec, _ = results[name]
        steps = args.hours * args.steps
        print(f"{name:8s} {sec:8.4f} s  {1e6 * sec / steps:8.2f} us/step")
    if len(results) == 2:
        (tp, xp), (tc, xc) = results["python"], results["cython"]
        print(f"speedup  {tp / tc:8.1f}x  identical end state: {xp == xc}")


if __name__ == "__main__":
    main()
