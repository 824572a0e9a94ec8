"""Discrete-event validation of the analytic pipeline.

The simulator plays the virtual-wait process in real time: the level
decreases at unit rate while all servers are busy, a joining arrival
lifts it by an exponential service-start gap, and an arrival that finds
a free server waits nothing.  Steady-state metrics are per-arrival
tallies summarized with batch means; passage probabilities race the
level against an exact deterministic deadline, so they are the limits
the transform horizons of the analytic solver approach as their order
grows.  The hot loops live in a compiled kernel with a pure-Python twin
producing bit-identical streams.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .passage import PassageQuery
from .patience import (
    Deterministic,
    ErlangK,
    Exponential,
    HyperExponential,
    MixtureExponentialWithBalking,
    PiecewiseConstantGa,
    Weibull,
)
from .waiting import CallCenterModel

try:
    from . import _kernel as _default_kernel
except ImportError:
    from . import _kernel_py as _default_kernel


def kernel_name():
    """Which kernel the package selected at import: cython or python."""
    return _default_kernel.KERNEL


def encode_patience(spec):
    """Flatten a patience law into the (code, pa, pb) triple the kernels
    evaluate in the hot loop; see ga_eval for the encoding."""
    if isinstance(spec, PiecewiseConstantGa):
        return 0, [float(x) for x in spec.breakpoints], [float(x) for x in spec.values]
    if isinstance(spec, Deterministic):
        return 0, [0.0, float(spec.threshold)], [0.0, 1.0]
    if isinstance(spec, (HyperExponential, MixtureExponentialWithBalking)):
        return 1, [float(w) for w in spec.weights], [float(r) for r in spec.rates]
    if isinstance(spec, Exponential):
        return 1, [1.0], [float(spec.rate)]
    if isinstance(spec, Weibull):
        return 2, [float(spec.rate), float(spec.shape)], [0.0]
    if isinstance(spec, ErlangK):
        return 3, [float(spec.stages), spec.stages / spec.mean], [0.0]
    raise TypeError(f"cannot simulate patience law {type(spec).__name__}")


def _event_tables(arrivals):
    """Cumulative per-phase event rates: m hidden columns, then m arrivals."""
    C, D = arrivals.C, arrivals.D
    m = arrivals.order
    hidden = np.where(np.eye(m, dtype=bool), 0.0, C)
    return np.ascontiguousarray(np.cumsum(np.hstack([hidden, D]), axis=1))


@dataclass(frozen=True)
class SimEstimate:
    value: float
    halfwidth: float

    def covers(self, x):
        return abs(x - self.value) <= self.halfwidth


@dataclass
class SimulatedWaitMetrics:
    pr_zero_wait: SimEstimate
    pr_zero_wait_given_success: SimEstimate
    pr_abandon: SimEstimate
    mean_wait_given_success: SimEstimate
    var_wait_given_success: SimEstimate
    cond_cdf_samples: list
    arrivals: int
    batches: int
    confidence: float
    kernel: str


@dataclass
class SimulatedPassage:
    probability: SimEstimate
    hits: int
    replications: int
    confidence: float
    kernel: str


def _batch_estimate(vals, confidence):
    vals = np.asarray(vals, dtype=float)
    t = stats.t.ppf(0.5 + confidence / 2.0, len(vals) - 1)
    return SimEstimate(value=float(vals.mean()),
                       halfwidth=float(t * vals.std(ddof=1) / math.sqrt(len(vals))))


def simulate_waiting_metrics(model: CallCenterModel, total_arrivals=2_000_000,
                             batches=32, warmup=0.1, cdf_grid=(0.1, 0.2),
                             seed=0, confidence=0.95,
                             kernel=None) -> SimulatedWaitMetrics:
    """Batch-means estimates of every steady-state waiting metric."""
    k = _default_kernel if kernel is None else kernel
    if batches < 2:
        raise ValueError("need at least two batches for an interval")
    warm = int(round(warmup * total_arrivals))
    per_batch = (total_arrivals - warm) // batches
    if per_batch < 1:
        raise ValueError("too few arrivals for the requested batch count")
    grid = tuple(cdf_grid) if cdf_grid is not None else ()
    if len(grid) > 2:
        raise ValueError("at most two cdf sample points are supported")
    x1 = float(grid[0]) if len(grid) >= 1 else -1.0
    x2 = float(grid[1]) if len(grid) >= 2 else -1.0

    code, pa, pb = encode_patience(model.patience)
    tallies = k.sim_wait_batches(
        _event_tables(model.arrivals), model.arrivals.order, model.servers,
        float(model.service_rate), code, np.asarray(pa), np.asarray(pb),
        warm, per_batch, batches, x1, x2, int(seed))

    n, n0, nab, nsp = tallies[:, 0], tallies[:, 1], tallies[:, 2], tallies[:, 3]
    sumw, sumw2, c1, c2 = tallies[:, 4], tallies[:, 5], tallies[:, 6], tallies[:, 7]
    served = n0 + nsp
    mean_b = sumw / served
    est = lambda vals: _batch_estimate(vals, confidence)
    samples = []
    if len(grid) >= 1:
        samples.append((x1, est(c1 / nsp)))
    if len(grid) >= 2:
        samples.append((x2, est(c2 / nsp)))
    return SimulatedWaitMetrics(
        pr_zero_wait=est(n0 / n),
        pr_zero_wait_given_success=est(n0 / served),
        pr_abandon=est(nab / n),
        mean_wait_given_success=est(mean_b),
        var_wait_given_success=est(sumw2 / served - mean_b * mean_b),
        cond_cdf_samples=samples,
        arrivals=int(per_batch) * batches,
        batches=batches,
        confidence=confidence,
        kernel=k.KERNEL,
    )


def simulate_passage_probability(model: CallCenterModel, query: PassageQuery,
                                 replications=100_000, seed=0, confidence=0.99,
                                 kernel=None) -> SimulatedPassage:
    """Replicated race against the exact deadline; binomial interval.

    The query's transform horizon is ignored: the simulated deadline is
    deterministic, which a signed matrix-exponential horizon could not
    sample anyway.
    """
    k = _default_kernel if kernel is None else kernel
    m = model.arrivals.order
    s = model.servers
    if len(query.theta0) != m:
        raise ValueError("theta0 length must match the arrival order")
    if len(query.pi0) != s + 1:
        raise ValueError("pi0 needs one entry per ladder level")
    if replications < 1:
        raise ValueError("need at least one replication")

    code, pa, pb = encode_patience(model.patience)
    hits = k.sim_passage(
        _event_tables(model.arrivals), m, s, float(model.service_rate),
        code, np.asarray(pa), np.asarray(pb), query.kind == "actual",
        float(query.a), float(query.b), float(query.tau),
        np.cumsum(np.asarray(query.theta0, dtype=float)),
        np.cumsum(np.asarray(query.pi0, dtype=float)),
        int(replications), int(seed))

    p = hits / replications
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    return SimulatedPassage(
        probability=SimEstimate(value=p,
                                halfwidth=float(z * math.sqrt(p * (1.0 - p)
                                                              / replications))),
        hits=int(hits),
        replications=int(replications),
        confidence=confidence,
        kernel=k.KERNEL,
    )
