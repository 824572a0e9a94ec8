"""Patience-time laws and their piecewise-constant discretization.

A patience law describes the time a waiting customer is prepared to
spend in queue.  What the fluid models consume is the abandonment
function g_a(x): the probability that a customer offered a wait of x
gives up, i.e. the cdf of the patience time.  Continuous laws are
discretized into a step function on quantile boundaries so that every
regime of the resulting fluid queue carries equal abandonment mass.
"""

import csv
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import brentq
from scipy.stats import gamma


@dataclass(frozen=True)
class Exponential:
    rate: float


@dataclass(frozen=True)
class MixtureExponentialWithBalking:
    """Atom at zero (immediate balking) plus exponential components."""

    atom: float
    weights: tuple
    rates: tuple


@dataclass(frozen=True)
class HyperExponential:
    weights: tuple
    rates: tuple


@dataclass(frozen=True)
class Deterministic:
    threshold: float


@dataclass(frozen=True)
class Weibull:
    rate: float
    shape: float


@dataclass(frozen=True)
class ErlangK:
    stages: int
    mean: float


@dataclass(frozen=True)
class PiecewiseConstantGa:
    """Exact step abandonment function: values[i] on [breakpoints[i], breakpoints[i+1])."""

    breakpoints: tuple
    values: tuple


PatienceSpec = Union[
    Exponential,
    MixtureExponentialWithBalking,
    HyperExponential,
    Deterministic,
    Weibull,
    ErlangK,
    PiecewiseConstantGa,
]


@dataclass(frozen=True)
class DiscretizedAbandonment:
    """Step abandonment function on regime boundaries T^(0)=0 < ... < T^(K-1).

    values[k] is the g_a level on regime k+1, i.e. on (T^(k), T^(k+1)),
    with the last level holding on (T^(K-1), inf) and equal to one.
    """

    boundaries: np.ndarray
    values: np.ndarray

    @property
    def K(self):
        return len(self.values)

    def value_at(self, x):
        # right-continuous step lookup
        k = int(np.searchsorted(self.boundaries, x, side="right")) - 1
        return float(self.values[max(k, 0)])


def abandonment_function(spec: PatienceSpec, x: float) -> float:
    """g_a(x): probability that a customer facing an offered wait x abandons."""
    if x < 0:
        raise ValueError("offered wait must be nonnegative")
    if isinstance(spec, Exponential):
        return 1.0 - np.exp(-spec.rate * x)
    if isinstance(spec, MixtureExponentialWithBalking):
        tail = sum(w * np.exp(-r * x) for w, r in zip(spec.weights, spec.rates))
        return 1.0 - tail
    if isinstance(spec, HyperExponential):
        return 1.0 - sum(w * np.exp(-r * x) for w, r in zip(spec.weights, spec.rates))
    if isinstance(spec, Deterministic):
        return 1.0 if x >= spec.threshold else 0.0
    if isinstance(spec, Weibull):
        return 1.0 - np.exp(-((spec.rate * x) ** spec.shape))
    if isinstance(spec, ErlangK):
        return float(gamma.cdf(x, a=spec.stages, scale=spec.mean / spec.stages))
    if isinstance(spec, PiecewiseConstantGa):
        k = int(np.searchsorted(spec.breakpoints, x, side="right")) - 1
        return float(spec.values[max(k, 0)])
    raise TypeError(f"unknown patience spec {type(spec).__name__}")


def survival_function(spec: PatienceSpec, x: float) -> float:
    """g_s(x) = Pr{patience > x}: the customer would outwait an offered wait x."""
    return 1.0 - abandonment_function(spec, x)


def _quantile(spec, q):
    """Generalized inverse inf{x : g_a(x) >= q} for 0 <= q < 1."""
    if isinstance(spec, Exponential):
        return -np.log1p(-q) / spec.rate
    if isinstance(spec, Weibull):
        return (-np.log1p(-q)) ** (1.0 / spec.shape) / spec.rate
    if isinstance(spec, ErlangK):
        return float(gamma.ppf(q, a=spec.stages, scale=spec.mean / spec.stages))
    if abandonment_function(spec, 0.0) >= q:
        return 0.0
    hi = 1.0
    while abandonment_function(spec, hi) < q:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("quantile bracket not found; cdf does not reach 1")
    return brentq(lambda x: abandonment_function(spec, x) - q, 0.0, hi, xtol=1e-13)


def quantile_discretize(spec: PatienceSpec, K: int) -> DiscretizedAbandonment:
    """Discretize g_a into K levels spread evenly between g_a(0) and 1.

    Boundaries sit at the generalized-inverse quantiles of the levels
    g_a(0) + (1 - g_a(0)) k/K, and each regime takes the midpoint of
    its level interval, so every regime absorbs an equal share of the
    abandonment mass remaining after any balking atom at zero.  The
    atom itself is carried exactly by the first regime, and the last
    (unbounded) regime is pinned to exactly one.  Boundaries that
    coincide (flat stretches or interior atoms of the cdf) are merged,
    shrinking the regime count.  Laws that are already piecewise
    constant pass through exactly.
    """
    if K < 1:
        raise ValueError("need at least one regime")
    if isinstance(spec, Deterministic):
        return DiscretizedAbandonment(
            boundaries=np.array([0.0, spec.threshold]), values=np.array([0.0, 1.0]))
    if isinstance(spec, PiecewiseConstantGa):
        return DiscretizedAbandonment(
            boundaries=np.asarray(spec.breakpoints, dtype=float),
            values=np.asarray(spec.values, dtype=float))
    q0 = abandonment_function(spec, 0.0)
    bounds = [0.0]
    lows = [q0]  # g_a level at the left edge of each kept regime
    for k in range(1, K):
        u = q0 + (1.0 - q0) * k / K
        t = _quantile(spec, u)
        if t > bounds[-1] + 1e-12:
            bounds.append(t)
            lows.append(u)
        else:
            lows[-1] = u
    values = [(lo + hi) / 2.0 for lo, hi in zip(lows[:-1], lows[1:])] + [1.0]
    return DiscretizedAbandonment(
        boundaries=np.asarray(bounds), values=np.asarray(values))


def piecewise_from_table(breakpoints, values) -> PiecewiseConstantGa:
    """Exact step law from parallel breakpoint/value sequences."""
    bps = tuple(float(b) for b in breakpoints)
    vals = tuple(float(v) for v in values)
    if len(bps) != len(vals) or not bps:
        raise ValueError("breakpoints and values must have equal nonzero length")
    if bps[0] != 0.0:
        raise ValueError("first breakpoint must be 0")
    if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
        raise ValueError("breakpoints must be strictly increasing")
    if any(v2 < v1 for v1, v2 in zip(vals, vals[1:])):
        raise ValueError("abandonment values must be nondecreasing")
    if vals[0] < 0.0 or vals[-1] != 1.0:
        raise ValueError("values must lie in [0,1] and end at exactly 1")
    return PiecewiseConstantGa(breakpoints=bps, values=vals)


def piecewise_from_csv(path) -> PiecewiseConstantGa:
    """Load a step law from CSV with one breakpoint,value pair per line."""
    bps, vals = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            bps.append(float(row[0]))
            vals.append(float(row[1]))
    return piecewise_from_table(bps, vals)
