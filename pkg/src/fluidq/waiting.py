"""Steady-state virtual waiting time of the multi-server queue with
Markovian arrivals, exponential services, and impatient customers.

The virtual wait is represented as a fluid level: phases (i, j) track
the number in service i (0..s) together with the arrival phase j, the
level decreases at unit rate while work drains, and a saturating
arrival lifts the level through the auxiliary (s, j) states at unit
rate for an exponential total amount.  Abandonment enters as the
level-dependent thinning of arrivals by the step function g_a, giving
one fluid regime per step.  Censoring the auxiliary states out of the
solved law yields the real-time distribution.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .arrivals import MapProcess, stationary_vectors
from .mrmfq import (
    MrmfqModel,
    SteadySolution,
    solve_steady,
    weighted_regime_integral,
    weighted_regime_integral_upto,
)
from .patience import DiscretizedAbandonment, quantile_discretize


@dataclass
class CallCenterModel:
    arrivals: MapProcess
    servers: int
    service_rate: float
    patience: object
    K: int = 250

    def __post_init__(self):
        if self.servers < 1:
            raise ValueError("need at least one server")
        if self.service_rate <= 0:
            raise ValueError("service rate must be positive")


@dataclass
class CensoredWaitSolution:
    """Solved wait model with the auxiliary level-s states censored out."""

    solution: SteadySolution
    discretization: DiscretizedAbandonment
    scale: float                      # 1 / retained probability before rescaling
    masses0: np.ndarray               # rescaled origin masses, (s+1)m entries
    positive_wait_probability: float  # rescaled integral of the wait density


@dataclass
class WaitingMetrics:
    pr_zero_wait: float
    pr_zero_wait_given_success: float
    pr_abandon: float
    pr_success: float
    pr_success_positive_wait: float
    mean_wait_given_success: float
    var_wait_given_success: float
    cond_cdf_samples: list = field(default_factory=list)


def build_virtual_wait_mrmfq(model: CallCenterModel) -> MrmfqModel:
    """Fluid model of the virtual wait; one regime per abandonment step."""
    m = model.arrivals.order
    s = model.servers
    mu = model.service_rate
    C, D = model.arrivals.C, model.arrivals.D
    disc = quantile_discretize(model.patience, model.K)
    K = disc.K
    n = m * (s + 1)
    I = np.eye(m)

    Q0 = np.zeros((n, n))
    for i in range(s):
        sl = slice(i * m, (i + 1) * m)
        Q0[sl, sl] = C - i * mu * I
        Q0[sl, (i + 1) * m:(i + 2) * m] = D
        if i > 0:
            Q0[sl, (i - 1) * m:i * m] = i * mu * I
    R0 = np.zeros(n)
    R0[s * m:] = 1.0

    regime_generators = []
    regime_drifts = []
    lo = slice((s - 1) * m, s * m)
    hi = slice(s * m, (s + 1) * m)
    drift = np.concatenate([-np.ones(s * m), np.ones(m)])
    for ga in disc.values:
        Qk = np.zeros((n, n))
        Qk[lo, lo] = C + D * ga
        Qk[lo, hi] = D * (1.0 - ga)
        Qk[hi, lo] = s * mu * I
        Qk[hi, hi] = -s * mu * I
        regime_generators.append(Qk)
        regime_drifts.append(drift.copy())

    boundaries = np.concatenate([disc.boundaries, [np.inf]])
    boundary_generators = [Q0] + regime_generators[1:] + [None]
    boundary_drifts = [R0] + regime_drifts[1:] + [None]
    mask = np.zeros(n, dtype=bool)
    mask[(s - 1) * m:] = True
    return MrmfqModel(n=n, boundaries=boundaries,
                      regime_generators=regime_generators,
                      regime_drifts=regime_drifts,
                      boundary_generators=boundary_generators,
                      boundary_drifts=boundary_drifts,
                      density_mask=mask)


def _wait_indicator(fluid, s, m, weights=None):
    v = np.zeros(fluid.n)
    v[(s - 1) * m:s * m] = 1.0 if weights is None else weights
    return v


def censor_and_normalize(sol: SteadySolution, model: CallCenterModel) -> CensoredWaitSolution:
    """Drop the auxiliary level-s states and renormalize what remains."""
    m = model.arrivals.order
    s = model.servers
    fluid = sol.model
    disc = quantile_discretize(model.patience, model.K)

    for k in range(1, fluid.K):
        interior = sol.masses[k].sum()
        if interior > 1e-12:
            raise ValueError(f"unexpected interior boundary mass {interior:.3e}")

    kept_mass = sol.masses[0][:s * m].sum()
    ind = _wait_indicator(fluid, s, m)
    dens = sum(weighted_regime_integral(sol, k + 1, (1.0,), ind)
               for k in range(fluid.K))
    eta = kept_mass + dens
    if eta <= 0.0:
        raise ValueError("censoring removed all probability (degenerate model)")
    masses0 = sol.masses[0] / eta
    masses0[s * m:] = 0.0
    return CensoredWaitSolution(solution=sol, discretization=disc,
                                scale=1.0 / eta, masses0=masses0,
                                positive_wait_probability=dens / eta)


def compute_metrics(cen: CensoredWaitSolution, model: CallCenterModel,
                    cdf_grid: Optional[Sequence] = (0.1, 0.2)) -> WaitingMetrics:
    """All steady-state wait metrics from the censored solution."""
    m = model.arrivals.order
    s = model.servers
    sol = cen.solution
    fluid = sol.model
    disc = cen.discretization
    sv = stationary_vectors(model.arrivals)
    lam, d_star = sv.rate, sv.d_star

    v = _wait_indicator(fluid, s, m, weights=d_star)
    ga = np.asarray(disc.values, dtype=float)
    gs = 1.0 - ga

    int_plain = [weighted_regime_integral(sol, k + 1, (1.0,), v) * cen.scale
                 for k in range(fluid.K)]
    int_x = [weighted_regime_integral(sol, k + 1, (0.0, 1.0), v) * cen.scale
             for k in range(fluid.K)]
    int_x2 = [weighted_regime_integral(sol, k + 1, (0.0, 0.0, 1.0), v) * cen.scale
              for k in range(fluid.K)]

    pr_zero = float((cen.masses0[:s * m].reshape(s, m).sum(axis=0) @ d_star) / lam)
    pr_abandon = float(np.dot(ga, int_plain)) / lam
    pr_spos = float(np.dot(gs, int_plain)) / lam
    pr_success = pr_zero + pr_spos
    if abs(pr_abandon + pr_success - 1.0) > 1e-10:
        raise ValueError(
            f"probability flow identity violated by {pr_abandon + pr_success - 1.0:.3e}")
    mean_ws = float(np.dot(gs, int_x)) / (lam * pr_success)
    ex2 = float(np.dot(gs, int_x2)) / (lam * pr_success)
    var_ws = ex2 - mean_ws * mean_ws

    samples = []
    if cdf_grid is not None:
        for x in cdf_grid:
            acc = sum(gs[k] * weighted_regime_integral_upto(sol, k + 1, (1.0,), v, x)
                      for k in range(fluid.K))
            samples.append((float(x), float(acc * cen.scale / (lam * pr_spos))))

    return WaitingMetrics(
        pr_zero_wait=pr_zero,
        pr_zero_wait_given_success=pr_zero / pr_success,
        pr_abandon=pr_abandon,
        pr_success=pr_success,
        pr_success_positive_wait=pr_spos,
        mean_wait_given_success=mean_ws,
        var_wait_given_success=var_ws,
        cond_cdf_samples=samples,
    )


def solve_waiting_metrics(model: CallCenterModel,
                          cdf_grid: Optional[Sequence] = (0.1, 0.2)) -> WaitingMetrics:
    """Build, solve, censor, and summarize in one call."""
    sol = solve_steady(build_virtual_wait_mrmfq(model))
    return compute_metrics(censor_and_normalize(sol, model), model, cdf_grid=cdf_grid)
