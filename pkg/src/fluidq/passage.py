"""First-passage probabilities for the virtual and actual waiting times.

The question answered here is: starting from a prescribed system state,
what is the probability that the (virtual or actual) waiting time
reaches a target level b before a deadline elapses?  The deadline is
represented by a phase-type or matrix-exponential law with mean tau, so
a concentrated choice stands in for a fixed deadline.

The computation embeds the race into a cyclic fluid model.  On top of
the waiting-time phases, every state carries the stage of the deadline
clock; the clock is frozen while the level climbs through the auxiliary
jump states, because those excursions take no real time.  When the race
resolves, in the target level or in a deadline expiry, the model parks
in a bookkeeping state for a unit-rate exponential pause and restarts
from the queried initial condition.  Each pause leaves the same
expected mass per visit, so the passage probability is a plain ratio of
stationary boundary masses.
"""

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .arrivals import MeDistribution, PhDistribution, cme_horizon, erlang_horizon
from .mrmfq import MrmfqModel, SteadySolution, solve_steady
from .patience import quantile_discretize
from .waiting import CallCenterModel


@dataclass(frozen=True)
class ErlangHorizon:
    """Erlang deadline with the given number of stages (SCV 1/order)."""

    order: int


@dataclass(frozen=True)
class CmeHorizon:
    """Concentrated matrix-exponential deadline (far lower SCV)."""

    order: int


Horizon = Union[ErlangHorizon, CmeHorizon, PhDistribution, MeDistribution]

_TOL = 1e-9


def realize_horizon(horizon: Horizon, tau: float):
    """Return (beta, B, me) for the deadline law; custom distributions
    are taken verbatim, the named families are scaled to mean tau."""
    if isinstance(horizon, ErlangHorizon):
        ph = erlang_horizon(horizon.order, tau)
        return ph.beta, ph.B, False
    if isinstance(horizon, CmeHorizon):
        me = cme_horizon(horizon.order, tau)
        return np.asarray(me.beta, dtype=float), np.asarray(me.B, dtype=float), True
    if isinstance(horizon, (PhDistribution, MeDistribution)):
        beta = np.asarray(horizon.beta, dtype=float)
        B = np.asarray(horizon.B, dtype=float)
        off = B - np.diag(np.diag(B))
        is_ph = (beta.min() >= 0.0 and off.min() >= 0.0
                 and np.diag(B).max() <= 0.0
                 and (-B @ np.ones(len(beta))).min() >= -1e-12)
        return beta, B, not is_ph
    raise ValueError(f"unsupported horizon specification: {horizon!r}")


@dataclass(frozen=True)
class PassageQuery:
    """Passage question: does the waiting time reach b before the
    deadline, starting from level a with pi0 in service and arrival
    phase theta0?

    pi0 runs over 0..s customers in service; any positive starting
    level forces all servers busy, so pi0 must then be the unit vector
    on s-1 (the all-busy row of the level description).
    """

    a: float
    b: float
    pi0: tuple
    theta0: tuple
    tau: float
    horizon: Horizon
    kind: str = "virtual"

    def __post_init__(self):
        if self.kind not in ("virtual", "actual"):
            raise ValueError("kind must be 'virtual' or 'actual'")
        if self.tau <= 0.0:
            raise ValueError("deadline mean tau must be positive")
        if self.a < 0.0 or self.b < 0.0:
            raise ValueError("levels a and b must be nonnegative")
        if abs(self.a - self.b) <= _TOL * max(1.0, self.a):
            raise ValueError("start and target level coincide; the passage is trivial")
        pi0 = np.asarray(self.pi0, dtype=float)
        theta0 = np.asarray(self.theta0, dtype=float)
        for name, v in (("pi0", pi0), ("theta0", theta0)):
            if v.ndim != 1 or len(v) == 0:
                raise ValueError(f"{name} must be a nonempty vector")
            if v.min() < 0.0 or abs(v.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must be a probability vector")
        if len(pi0) < 2 or pi0[-1] != 0.0:
            raise ValueError("no initial probability may sit on the auxiliary jump level")
        if self.a > 0.0 and pi0[-2] != 1.0:
            raise ValueError("a positive starting level requires all servers busy "
                             "(pi0 concentrated on s-1)")
        object.__setattr__(self, "pi0", tuple(float(x) for x in pi0))
        object.__setattr__(self, "theta0", tuple(float(x) for x in theta0))


@dataclass
class PassageModel:
    """Assembled fluid model plus the bookkeeping needed to read it."""

    fluid: MrmfqModel
    query: PassageQuery
    servers: int
    phases: int          # arrival phases
    order: int           # deadline stages
    phase_base: int      # index of the first (stage, level, phase) state
    zero_index: int      # expiry bookkeeping state
    success_index: Optional[int]  # passage bookkeeping state (actual kind)
    reset_boundary: int  # boundary whose atom restarts the race
    offset: float = 0.0  # physical level of model coordinate zero

    def phase_index(self, stage, level, phase):
        m, s = self.phases, self.servers
        return self.phase_base + (stage * (s + 1) + level) * m + phase


def _start_vectors(q: PassageQuery, s: int, m: int):
    pi0 = np.asarray(q.pi0, dtype=float)
    theta0 = np.asarray(q.theta0, dtype=float)
    if len(pi0) != s + 1:
        raise ValueError(f"pi0 must have {s + 1} entries (0..s in service)")
    if len(theta0) != m:
        raise ValueError(f"theta0 must have {m} entries (arrival phases)")
    return pi0, theta0


def _y_regime(C, D, s, mu, ga, hot=False):
    # waiting-time phase block of one regime; a hot regime (at or above
    # the target of an actual-wait query) routes joiners out instead of
    # starting a jump
    m = C.shape[0]
    n = m * (s + 1)
    Q = np.zeros((n, n))
    lo = slice((s - 1) * m, s * m)
    hi = slice(s * m, (s + 1) * m)
    Q[lo, lo] = C + D * ga
    if not hot:
        Q[lo, hi] = D * (1.0 - ga)
    Q[hi, lo] = s * mu * np.eye(m)
    Q[hi, hi] = -s * mu * np.eye(m)
    return Q


def _y_ladder(C, D, s, mu):
    # level-zero block: idle servers fill one by one, arrivals unthinned
    m = C.shape[0]
    n = m * (s + 1)
    Q = np.zeros((n, n))
    I = np.eye(m)
    for i in range(s):
        sl = slice(i * m, (i + 1) * m)
        Q[sl, sl] = C - i * mu * I
        Q[sl, (i + 1) * m:(i + 2) * m] = D
        if i > 0:
            Q[sl, (i - 1) * m:i * m] = i * mu * I
    return Q


def _clock_pattern(s, m, freeze_timer):
    # deadline clock activity per (level, phase): off during jumps
    active = np.ones(m * (s + 1))
    if freeze_timer:
        active[s * m:] = 0.0
    return active


def _merged_grid(inner, *levels):
    """Sorted positive levels with the requested ones merged in."""
    pts = list(inner)
    for x in levels:
        if x <= 0.0:
            continue
        if not any(abs(x - t) <= _TOL * max(1.0, x) for t in pts):
            pts.append(x)
    return sorted(pts)


def _level_index(boundaries, x):
    hits = [k for k, t in enumerate(boundaries)
            if np.isfinite(t) and abs(t - x) <= _TOL * max(1.0, x)]
    if len(hits) != 1:
        raise ValueError(f"level {x} does not sit on the regime grid")
    return hits[0]


def _toward(lo, hi, target):
    # drift of a bookkeeping state on (lo, hi): unit rate toward target
    return 1.0 if hi <= target + _TOL * max(1.0, target) else -1.0


def build_virtual_passage_model(model: CallCenterModel, q: PassageQuery,
                                freeze_timer: bool = True) -> PassageModel:
    """Fluid model racing the virtual waiting time against the deadline.

    For b > a the level lives on [0, b] with an absorbing pause at the
    target; for b < a it lives on [b, inf) shifted down by b, and the
    passage is the drain down to the target.
    """
    if q.kind != "virtual":
        raise ValueError("query kind is not 'virtual'")
    arr = model.arrivals
    m, s, mu = arr.order, model.servers, model.service_rate
    C, D = np.asarray(arr.C, dtype=float), np.asarray(arr.D, dtype=float)
    pi0, theta0 = _start_vectors(q, s, m)
    beta, B, me = realize_horizon(q.horizon, q.tau)
    ell = len(beta)
    B0 = -B @ np.ones(ell)
    disc = quantile_discretize(model.patience, model.K)

    upward = q.b > q.a
    if upward:
        offset = 0.0
        inner = [t for t in disc.boundaries[1:]
                 if t < q.b - _TOL * max(1.0, q.b)]
        bnds = [0.0] + _merged_grid(inner, q.a, q.b)
    else:
        offset = q.b
        inner = [t - q.b for t in disc.boundaries[1:]
                 if t > q.b + _TOL * max(1.0, q.b)]
        bnds = [0.0] + _merged_grid(inner, q.a - q.b) + [np.inf]

    K = len(bnds) - 1
    ny = m * (s + 1)
    n = 1 + ell * ny
    clock = _clock_pattern(s, m, freeze_timer)
    expiry = np.kron(B0, clock)
    course = np.kron(B, np.diag(clock))
    reset_row = np.kron(beta, np.kron(pi0, theta0))
    ry = np.concatenate([-np.ones(s * m), np.ones(m)])
    a_model = q.a - offset
    reset_k = _level_index(bnds, a_model)

    regime_generators, regime_drifts = [], []
    for k in range(K):
        hi_edge = bnds[k + 1]
        mid = offset + (bnds[k] + (hi_edge if np.isfinite(hi_edge) else bnds[k] + 2.0)) / 2.0
        ga = disc.value_at(mid)
        Q = np.zeros((n, n))
        Q[1:, 1:] = np.kron(np.eye(ell), _y_regime(C, D, s, mu, ga)) + course
        Q[1:, 0] = expiry
        r = np.empty(n)
        r[0] = _toward(bnds[k], hi_edge, a_model)
        r[1:] = np.tile(ry, ell)
        regime_generators.append(Q)
        regime_drifts.append(r)

    def with_reset(Q, r):
        Q = Q.copy()
        Q[0] = 0.0
        Q[0, 0] = -1.0
        Q[0, 1:] = reset_row
        r = r.copy()
        r[0] = 0.0
        return Q, r

    boundary_generators, boundary_drifts = [None] * (K + 1), [None] * (K + 1)
    # bottom boundary: level-zero queue dynamics (b > a) or the target (b < a)
    if upward:
        Q0 = np.zeros((n, n))
        Q0[1:, 1:] = np.kron(np.eye(ell), _y_ladder(C, D, s, mu)) + course
        Q0[1:, 0] = expiry
        R0 = np.zeros(n)
        R0[1:] = np.tile(np.concatenate([np.zeros(s * m), np.ones(m)]), ell)
        if reset_k == 0:
            Q0, R0 = with_reset(Q0, R0)
        else:
            R0[0] = 1.0  # the expiry state climbs back toward the restart level
        boundary_generators[0], boundary_drifts[0] = Q0, R0
    else:
        Qb = np.zeros((n, n))
        for sigma in range(ell):
            for iy in range(s * m):  # draining rows pause, then report back
                j = 1 + sigma * ny + iy
                Qb[j, j] = -1.0
                Qb[j, 0] = 1.0
        Rb = np.zeros(n)
        Rb[1:] = np.tile(np.concatenate([np.zeros(s * m), np.ones(m)]), ell)
        Rb[0] = 1.0
        boundary_generators[0], boundary_drifts[0] = Qb, Rb

    for k in range(1, K):
        Qk, rk = regime_generators[k], regime_drifts[k]
        if k == reset_k:
            Qk, rk = with_reset(Qk, rk)
        boundary_generators[k], boundary_drifts[k] = Qk, rk

    if upward:
        Qt = np.zeros((n, n))
        Qt[1:, 1:] = -np.eye(ell * ny)
        Qt[1:, 0] = 1.0
        Rt = np.zeros(n)
        Rt[0] = -1.0
        boundary_generators[K], boundary_drifts[K] = Qt, Rt

    mask = np.zeros(n, dtype=bool)
    mask[0] = True
    for sigma in range(ell):
        mask[1 + sigma * ny + (s - 1) * m:1 + (sigma + 1) * ny] = True

    fluid = MrmfqModel(n=n, boundaries=np.asarray(bnds, dtype=float),
                       regime_generators=regime_generators,
                       regime_drifts=regime_drifts,
                       boundary_generators=boundary_generators,
                       boundary_drifts=boundary_drifts,
                       density_mask=mask, me_blocks=me)
    return PassageModel(fluid=fluid, query=q, servers=s, phases=m, order=ell,
                        phase_base=1, zero_index=0, success_index=None,
                        reset_boundary=reset_k, offset=offset)


def build_actual_passage_model(model: CallCenterModel, q: PassageQuery,
                               freeze_timer: bool = True) -> PassageModel:
    """Fluid model racing the actual waiting time against the deadline.

    The passage fires when a customer who joins for good arrives to an
    offered wait of at least b, so the level keeps its full range and
    the model gains a second bookkeeping state for successes.
    """
    if q.kind != "actual":
        raise ValueError("query kind is not 'actual'")
    if q.b <= 0.0:
        raise ValueError("the actual-wait passage needs a positive target level")
    arr = model.arrivals
    m, s, mu = arr.order, model.servers, model.service_rate
    C, D = np.asarray(arr.C, dtype=float), np.asarray(arr.D, dtype=float)
    pi0, theta0 = _start_vectors(q, s, m)
    beta, B, me = realize_horizon(q.horizon, q.tau)
    ell = len(beta)
    B0 = -B @ np.ones(ell)
    disc = quantile_discretize(model.patience, model.K)

    bnds = [0.0] + _merged_grid(disc.boundaries[1:], q.a, q.b) + [np.inf]
    K = len(bnds) - 1
    ny = m * (s + 1)
    n = 2 + ell * ny
    clock = _clock_pattern(s, m, freeze_timer)
    expiry = np.kron(B0, clock)
    course = np.kron(B, np.diag(clock))
    reset_row = np.kron(beta, np.kron(pi0, theta0))
    ry = np.concatenate([-np.ones(s * m), np.ones(m)])
    drow = D.sum(axis=1)
    reset_k = _level_index(bnds, q.a)

    regime_generators, regime_drifts = [], []
    for k in range(K):
        hi_edge = bnds[k + 1]
        mid = (bnds[k] + (hi_edge if np.isfinite(hi_edge) else bnds[k] + 2.0)) / 2.0
        ga = disc.value_at(mid)
        hot = bnds[k] >= q.b - _TOL * max(1.0, q.b)
        Q = np.zeros((n, n))
        Q[2:, 2:] = np.kron(np.eye(ell), _y_regime(C, D, s, mu, ga, hot=hot)) + course
        Q[2:, 1] = expiry
        if hot:
            catch = np.zeros(ny)
            catch[(s - 1) * m:s * m] = drow * (1.0 - ga)
            Q[2:, 0] = np.tile(catch, ell)
        r = np.empty(n)
        r[0] = r[1] = _toward(bnds[k], hi_edge, q.a)
        r[2:] = np.tile(ry, ell)
        regime_generators.append(Q)
        regime_drifts.append(r)

    def with_reset(Q, r):
        Q = Q.copy()
        r = r.copy()
        for row in (0, 1):
            Q[row] = 0.0
            Q[row, row] = -1.0
            Q[row, 2:] = reset_row
            r[row] = 0.0
        return Q, r

    boundary_generators = [None] * (K + 1)
    boundary_drifts = [None] * (K + 1)
    Q0 = np.zeros((n, n))
    Q0[2:, 2:] = np.kron(np.eye(ell), _y_ladder(C, D, s, mu)) + course
    Q0[2:, 1] = expiry
    R0 = np.zeros(n)
    R0[2:] = np.tile(np.concatenate([np.zeros(s * m), np.ones(m)]), ell)
    if reset_k == 0:
        Q0, R0 = with_reset(Q0, R0)
    else:
        R0[0] = R0[1] = 1.0
    boundary_generators[0], boundary_drifts[0] = Q0, R0
    for k in range(1, K):
        Qk, rk = regime_generators[k], regime_drifts[k]
        if k == reset_k:
            Qk, rk = with_reset(Qk, rk)
        boundary_generators[k], boundary_drifts[k] = Qk, rk

    mask = np.zeros(n, dtype=bool)
    mask[0] = mask[1] = True
    for sigma in range(ell):
        mask[2 + sigma * ny + (s - 1) * m:2 + (sigma + 1) * ny] = True

    fluid = MrmfqModel(n=n, boundaries=np.asarray(bnds, dtype=float),
                       regime_generators=regime_generators,
                       regime_drifts=regime_drifts,
                       boundary_generators=boundary_generators,
                       boundary_drifts=boundary_drifts,
                       density_mask=mask, me_blocks=me)
    return PassageModel(fluid=fluid, query=q, servers=s, phases=m, order=ell,
                        phase_base=2, zero_index=1, success_index=0,
                        reset_boundary=reset_k, offset=0.0)


def _clamp_probability(p):
    if -_TOL <= p <= 1.0 + _TOL:
        return min(max(p, 0.0), 1.0)
    if -0.05 <= p <= 1.05:
        warnings.warn(f"passage estimate {p:.3e} clipped into [0, 1]")
        return min(max(p, 0.0), 1.0)
    raise ValueError(f"passage estimate {p:.3e} is not a probability; "
                     "the model solve is unreliable")


def estimate_virtual_passage(pm: PassageModel, sol: SteadySolution) -> float:
    """Passage probability as the ratio of target pauses to restarts."""
    masses = sol.masses
    target_boundary = len(pm.fluid.boundaries) - 1 if pm.query.b > pm.query.a else 0
    c_target = masses[target_boundary, pm.phase_base:].sum()
    c_reset = masses[pm.reset_boundary, pm.zero_index]
    if not c_reset > 0.0:
        raise ValueError("restart state carries no stationary mass; "
                         "the cycle structure collapsed")
    return _clamp_probability(c_target / c_reset)


def estimate_actual_passage(pm: PassageModel, sol: SteadySolution) -> float:
    """Passage probability as the success share of resolved races."""
    masses = sol.masses
    c_pass = masses[pm.reset_boundary, pm.success_index]
    c_zero = masses[pm.reset_boundary, pm.zero_index]
    total = c_pass + c_zero
    if not total > 0.0:
        raise ValueError("restart states carry no stationary mass; "
                         "the cycle structure collapsed")
    return _clamp_probability(c_pass / total)


def solve_passage(model: CallCenterModel, q: PassageQuery,
                  freeze_timer: bool = True) -> float:
    """Build, solve, and read off the queried passage probability."""
    if q.kind == "virtual":
        pm = build_virtual_passage_model(model, q, freeze_timer)
        return estimate_virtual_passage(pm, solve_steady(pm.fluid))
    pm = build_actual_passage_model(model, q, freeze_timer)
    return estimate_actual_passage(pm, solve_steady(pm.fluid))
