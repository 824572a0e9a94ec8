"""Compare the compiled simulation kernel against its pure-Python twin.

Runs the same seeded workloads through both kernels, checks the tallies
agree bit for bit, and reports the throughput ratio.

Usage: python3 benchmarks/bench_kernel.py [--arrivals N] [--replications N]
"""

import argparse
import time

import numpy as np

from fluidq import _kernel_py
from fluidq.arrivals import build_superposed_mmpp
from fluidq.passage import ErlangHorizon, PassageQuery
from fluidq.patience import Exponential
from fluidq.simulate import simulate_passage_probability, simulate_waiting_metrics
from fluidq.waiting import CallCenterModel

try:
    from fluidq import _kernel
except ImportError:
    _kernel = None


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--arrivals", type=int, default=400_000)
    ap.add_argument("--replications", type=int, default=20_000)
    args = ap.parse_args()

    if _kernel is None:
        raise SystemExit("compiled kernel not built; run "
                         "python3 setup.py build_ext --inplace first")

    model = CallCenterModel(arrivals=build_superposed_mmpp(10), servers=10,
                            service_rate=1.0, patience=Exponential(rate=1.0))
    query = PassageQuery(a=0.0, b=1.0, pi0=(1.0,) + (0.0,) * 10,
                         theta0=(1.0,) + (0.0,) * 10, tau=5.0,
                         horizon=ErlangHorizon(25), kind="virtual")

    print(f"steady-state workload: {args.arrivals} arrivals")
    res_c, dt_c = _timed(lambda: simulate_waiting_metrics(
        model, total_arrivals=args.arrivals, seed=7, kernel=_kernel))
    res_p, dt_p = _timed(lambda: simulate_waiting_metrics(
        model, total_arrivals=args.arrivals, seed=7, kernel=_kernel_py))
    match = res_c.pr_abandon == res_p.pr_abandon
    print(f"  cython {dt_c:8.2f}s   python {dt_p:8.2f}s   "
          f"speedup {dt_p / dt_c:6.1f}x   tallies identical: {match}")

    print(f"passage workload: {args.replications} replications")
    pas_c, dt_c = _timed(lambda: simulate_passage_probability(
        model, query, replications=args.replications, seed=7, kernel=_kernel))
    pas_p, dt_p = _timed(lambda: simulate_passage_probability(
        model, query, replications=args.replications, seed=7, kernel=_kernel_py))
    match = pas_c.hits == pas_p.hits
    print(f"  cython {dt_c:8.2f}s   python {dt_p:8.2f}s   "
          f"speedup {dt_p / dt_c:6.1f}x   hit counts identical: {match}")

    if not match:
        raise SystemExit("kernel mismatch")


if __name__ == "__main__":
    main()
