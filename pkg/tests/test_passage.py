"""First-passage estimators for the virtual and actual waiting time.

The analytical estimates are checked three ways: structural invariants
of the assembled fluid models, a direct Monte-Carlo simulation of the
passage definition on a small scenario (horizon sampled from the same
phase-type law, so the comparison carries no discretization gap), and
frozen reference values for the large correlated-arrivals scenario.
"""

import numpy as np
import pytest

from fluidq.arrivals import (
    MapProcess,
    PhDistribution,
    build_correlated_map,
    erlang_horizon,
    hyperexp_balanced_means,
)
from fluidq.passage import (
    CmeHorizon,
    ErlangHorizon,
    PassageQuery,
    build_actual_passage_model,
    build_virtual_passage_model,
    estimate_actual_passage,
    estimate_virtual_passage,
    realize_horizon,
    solve_passage,
)
from fluidq.patience import piecewise_from_table
from fluidq.mrmfq import solve_steady
from fluidq.waiting import CallCenterModel


def _map2():
    C = np.array([[-3.0, 1.0], [0.5, -2.0]])
    D = np.array([[1.5, 0.5], [1.0, 0.5]])
    return MapProcess(C=C, D=D)


def _poisson(lam):
    return MapProcess(C=np.array([[-lam]]), D=np.array([[lam]]))


STEP_LAW = piecewise_from_table([0.0, 1.0], [0.3, 1.0])


def _small_model(arrivals=None, s=2):
    return CallCenterModel(arrivals=arrivals or _poisson(1.5), servers=s,
                           service_rate=1.0, patience=STEP_LAW)


def _corr_model():
    # correlated hyperexponential arrivals, 10 servers, staircase patience
    v, T = hyperexp_balanced_means(1.0 / 9.9, 16.0)
    arrivals = build_correlated_map(v, T, 0.95)
    law = piecewise_from_table(list(range(11)), [k / 10.0 for k in range(11)])
    return CallCenterModel(arrivals=arrivals, servers=10, service_rate=1.0,
                           patience=law)


def _empty_pi0(s):
    pi0 = np.zeros(s + 1)
    pi0[0] = 1.0
    return pi0


def _busy_pi0(s):
    pi0 = np.zeros(s + 1)
    pi0[s - 1] = 1.0
    return pi0


# ---------------------------------------------------------------------------
# horizon realization


def test_realize_erlang_horizon():
    beta, B, me = realize_horizon(ErlangHorizon(3), 1.5)
    assert not me
    np.testing.assert_allclose(beta, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(B, 2.0 * (np.diag([1.0, 1.0], 1) - np.eye(3)))


def test_realize_cme_horizon_is_me():
    beta, B, me = realize_horizon(CmeHorizon(25), 1.0)
    assert me
    assert beta.shape == (25,)
    assert beta.min() < 0.0  # concentrated ME weights are signed
    np.testing.assert_allclose(beta.sum(), 1.0, atol=1e-8)


def test_realize_custom_horizon_used_verbatim():
    ph = erlang_horizon(4, 7.0)  # mean deliberately differs from tau below
    beta, B, me = realize_horizon(ph, 1.0)
    assert not me
    np.testing.assert_allclose(B, ph.B)
    np.testing.assert_allclose(beta, ph.beta)


# ---------------------------------------------------------------------------
# query validation


def test_query_rejects_bad_inputs():
    s = 2
    good = dict(a=0.0, b=0.6, pi0=_empty_pi0(s), theta0=[1.0], tau=2.0,
                horizon=ErlangHorizon(3), kind="virtual")
    model = _small_model()
    build_virtual_passage_model(model, PassageQuery(**good))

    with pytest.raises(ValueError):
        PassageQuery(**{**good, "tau": 0.0})
    with pytest.raises(ValueError):
        PassageQuery(**{**good, "a": 0.6})  # a == b
    with pytest.raises(ValueError):
        PassageQuery(**{**good, "b": -0.1})
    with pytest.raises(ValueError):
        PassageQuery(**{**good, "kind": "sojourn"})
    with pytest.raises(ValueError):
        PassageQuery(**{**good, "theta0": [-1.0]})
    with pytest.raises(ValueError):
        PassageQuery(**{**good, "pi0": [0.5, 0.0, 0.0]})  # does not sum to 1
    with pytest.raises(ValueError):
        # no initial probability may sit on the auxiliary jump level
        PassageQuery(**{**good, "pi0": [0.0, 0.0, 1.0]})
    with pytest.raises(ValueError):
        # a positive starting level forces the all-busy phase row
        PassageQuery(**{**good, "a": 0.3, "pi0": _empty_pi0(s)})
    with pytest.raises(ValueError):
        build_virtual_passage_model(model, PassageQuery(**{**good, "kind": "actual"}))
    with pytest.raises(ValueError):
        build_actual_passage_model(model, PassageQuery(**good))


# ---------------------------------------------------------------------------
# structure of the assembled fluid models


def _virtual_toy(b=1.7, order=3, tau=1.0):
    model = _small_model(arrivals=_map2())
    q = PassageQuery(a=0.0, b=b, pi0=_empty_pi0(2), theta0=[0.25, 0.75],
                     tau=tau, horizon=ErlangHorizon(order), kind="virtual")
    return model, q, build_virtual_passage_model(model, q)


def test_virtual_model_shape_and_grid():
    model, q, pm = _virtual_toy(b=1.7)
    # 1 pursuit state + order * m * (servers + 1) phases
    assert pm.fluid.n == 1 + 3 * 2 * 3
    np.testing.assert_allclose(pm.fluid.boundaries, [0.0, 1.0, 1.7])
    assert pm.zero_index == 0
    assert pm.success_index is None
    assert pm.reset_boundary == 0
    assert not pm.fluid.me_blocks

    # a target below the first patience breakpoint leaves a single regime
    _, _, pm1 = _virtual_toy(b=0.6)
    assert pm1.fluid.K == 1
    np.testing.assert_allclose(pm1.fluid.boundaries, [0.0, 0.6])

    # a target on a patience breakpoint is merged, not duplicated
    _, _, pm2 = _virtual_toy(b=1.0)
    np.testing.assert_allclose(pm2.fluid.boundaries, [0.0, 1.0])


def test_virtual_regime_rows():
    model, q, pm = _virtual_toy(b=1.7)
    s, m, mu = 2, 2, 1.0
    C, D = _map2().C, _map2().D
    B = 3.0 * (np.diag([1.0, 1.0], 1) - np.eye(3))
    idx = pm.phase_index
    Q1 = np.asarray(pm.fluid.regime_generators[0])

    # every generator row balances
    for k in range(pm.fluid.K):
        Q = np.asarray(pm.fluid.regime_generators[k])
        assert np.abs(Q.sum(axis=1)).max() < 1e-10
        assert np.abs(Q[0]).max() == 0.0  # pursuit state only moves

    # ga = 0.3 on the first regime thins the joining stream
    assert Q1[idx(1, 1, 0), idx(1, 2, 1)] == pytest.approx(D[0, 1] * 0.7)
    assert Q1[idx(1, 1, 0), idx(1, 1, 1)] == pytest.approx(C[0, 1] + D[0, 1] * 0.3)
    # service drains the jump level back
    assert Q1[idx(1, 2, 0), idx(1, 1, 0)] == pytest.approx(s * mu)
    assert Q1[idx(1, 2, 0), idx(1, 2, 0)] == pytest.approx(-s * mu)

    # horizon clock runs in waiting rows and freezes during jumps
    assert Q1[idx(0, 1, 1), idx(1, 1, 1)] == pytest.approx(B[0, 1])
    assert Q1[idx(0, 2, 1), idx(1, 2, 1)] == 0.0
    assert Q1[idx(2, 1, 1), 0] == pytest.approx(3.0)  # expiry from last stage
    assert Q1[idx(2, 2, 1), 0] == 0.0

    # drifts: pursuit state falls toward the origin, jump level rises
    r = np.asarray(pm.fluid.regime_drifts[0])
    assert r[0] == -1.0
    assert r[idx(1, 0, 0)] == -1.0 and r[idx(1, 1, 0)] == -1.0
    assert r[idx(1, 2, 0)] == 1.0

    mask = pm.fluid.density_mask
    assert mask[0] and mask[idx(0, 1, 0)] and mask[idx(0, 2, 1)]
    assert not mask[idx(0, 0, 0)]


def test_virtual_boundary_rows():
    model, q, pm = _virtual_toy(b=1.7)
    idx = pm.phase_index
    D = _map2().D
    Q0 = np.asarray(pm.fluid.boundary_generators[0])
    R0 = np.asarray(pm.fluid.boundary_drifts[0])

    # reset: unit exit rate into the queried start distribution
    assert Q0[0, 0] == pytest.approx(-1.0)
    for j, w in enumerate([0.25, 0.75]):
        assert Q0[0, idx(0, 0, j)] == pytest.approx(w)  # Erlang starts in stage 1
        assert Q0[0, idx(1, 0, j)] == 0.0
    # idle-period arrivals are never thinned
    assert Q0[idx(1, 0, 0), idx(1, 1, 1)] == pytest.approx(D[0, 1])
    assert R0[0] == 0.0 and R0[idx(0, 0, 0)] == 0.0 and R0[idx(0, 2, 0)] == 1.0

    Qb = np.asarray(pm.fluid.boundary_generators[-1])
    Rb = np.asarray(pm.fluid.boundary_drifts[-1])
    assert np.abs(Qb[0]).max() == 0.0
    assert Qb[idx(1, 2, 0), 0] == pytest.approx(1.0)
    assert Qb[idx(1, 2, 0), idx(1, 2, 0)] == pytest.approx(-1.0)
    assert Rb[0] == -1.0 and Rb[idx(1, 2, 0)] == 0.0


def test_actual_model_rows():
    model = _small_model(arrivals=_map2())
    q = PassageQuery(a=0.0, b=0.6, pi0=_empty_pi0(2), theta0=[0.25, 0.75],
                     tau=1.0, horizon=ErlangHorizon(3), kind="actual")
    pm = build_actual_passage_model(model, q)
    C, D = _map2().C, _map2().D
    idx = pm.phase_index

    assert pm.fluid.n == 2 + 3 * 2 * 3
    assert pm.success_index == 0 and pm.zero_index == 1
    np.testing.assert_allclose(pm.fluid.boundaries, [0.0, 0.6, 1.0, np.inf])
    assert pm.fluid.boundary_generators[-1] is None

    Qcold = np.asarray(pm.fluid.regime_generators[0])
    Qhot = np.asarray(pm.fluid.regime_generators[1])
    for Q in (Qcold, Qhot):
        assert np.abs(Q.sum(axis=1)).max() < 1e-10
        assert np.abs(Q[0]).max() == 0.0 and np.abs(Q[1]).max() == 0.0

    # below the target no flow reaches the success state
    assert np.abs(Qcold[:, 0]).max() == 0.0
    # above it, a joining customer is a registered passage instead of a jump
    drow = D.sum(axis=1)
    for sigma in range(3):
        for j in range(2):
            assert Qhot[idx(sigma, 1, j), 0] == pytest.approx(drow[j] * 0.7)
            assert Qhot[idx(sigma, 1, j), idx(sigma, 2, j)] == 0.0
            # diagonal carries the thinned arrivals plus the clock stage rate
            assert Qhot[idx(sigma, 1, j), idx(sigma, 1, j)] == pytest.approx(
                C[j, j] + D[j, j] * 0.3 - 3.0)
    # the jump level itself still drains normally above the target
    assert Qhot[idx(0, 2, 0), idx(0, 1, 0)] == pytest.approx(2.0)

    Q0 = np.asarray(pm.fluid.boundary_generators[0])
    for row in (0, 1):
        assert Q0[row, row] == pytest.approx(-1.0)
        assert Q0[row, idx(0, 0, 1)] == pytest.approx(0.75)

    r = np.asarray(pm.fluid.regime_drifts[1])
    assert r[0] == -1.0 and r[1] == -1.0


def test_cme_horizon_flags_me_blocks():
    model = _small_model()
    q = PassageQuery(a=0.0, b=0.6, pi0=_empty_pi0(2), theta0=[1.0], tau=2.0,
                     horizon=CmeHorizon(25), kind="virtual")
    pm = build_virtual_passage_model(model, q)
    assert pm.fluid.me_blocks


# ---------------------------------------------------------------------------
# Monte-Carlo oracle: simulate the passage definition directly, with the
# horizon drawn from the same Erlang law the analytical model embeds


def _mc_passage(seed, reps, lam, s, mu, ga, a, b, kind, sample_u):
    rng = np.random.default_rng(seed)
    srate = s * mu
    floor = b if (kind == "virtual" and b < a) else 0.0
    hits = 0
    for _ in range(reps):
        u = sample_u(rng)
        t = 0.0
        if a > 0.0:
            v, busy = a, s
        else:
            v, busy = 0.0, 0
        while True:
            if v <= 0.0 and busy < s:
                rate = lam + busy * mu
                dt = rng.exponential(1.0 / rate)
                if t + dt >= u:
                    break
                t += dt
                if rng.random() < lam / rate:
                    busy += 1
                    if busy == s:
                        v = rng.exponential(1.0 / srate)
                        if kind == "virtual" and floor == 0.0 and v >= b:
                            hits += 1
                            break
                else:
                    busy -= 1
            else:
                dt_arr = rng.exponential(1.0 / lam)
                t_floor = t + (v - floor)
                if floor > 0.0 and t_floor <= min(t + dt_arr, u):
                    hits += 1  # drained down into the target level
                    break
                if u <= t + dt_arr and u <= t_floor:
                    break
                if t_floor <= t + dt_arr:
                    t, v, busy = t_floor, 0.0, s - 1
                    continue
                t += dt_arr
                v -= dt_arr
                if kind == "actual" and v >= b:
                    if rng.random() >= ga(v):
                        hits += 1
                        break
                    continue
                if rng.random() >= ga(v):
                    v += rng.exponential(1.0 / srate)
                    if kind == "virtual" and floor == 0.0 and v >= b:
                        hits += 1
                        break
    return hits / reps


def _step_ga(x):
    return 0.3 if x < 1.0 else 1.0


def _erlang_sampler(order, tau):
    return lambda rng: rng.gamma(order, tau / order)


MC_REPS = 100_000


def test_virtual_estimate_matches_simulation():
    model = _small_model()
    q = PassageQuery(a=0.0, b=0.6, pi0=_empty_pi0(2), theta0=[1.0], tau=2.0,
                     horizon=ErlangHorizon(4), kind="virtual")
    est = solve_passage(model, q)
    ref = _mc_passage(20240601, MC_REPS, 1.5, 2, 1.0, _step_ga, 0.0, 0.6,
                      "virtual", _erlang_sampler(4, 2.0))
    assert 0.0 <= est <= 1.0
    assert abs(est - ref) < 0.007


def test_actual_estimate_matches_simulation():
    model = _small_model()
    q = PassageQuery(a=0.0, b=0.6, pi0=_empty_pi0(2), theta0=[1.0], tau=2.0,
                     horizon=ErlangHorizon(4), kind="actual")
    est = solve_passage(model, q)
    ref = _mc_passage(20240602, MC_REPS, 1.5, 2, 1.0, _step_ga, 0.0, 0.6,
                      "actual", _erlang_sampler(4, 2.0))
    assert 0.0 <= est <= 1.0
    assert abs(est - ref) < 0.007


def test_virtual_estimate_from_interior_start():
    # start at a positive level; the reset boundary sits inside the grid
    model = _small_model()
    q = PassageQuery(a=0.4, b=1.2, pi0=_busy_pi0(2), theta0=[1.0], tau=2.0,
                     horizon=ErlangHorizon(4), kind="virtual")
    est = solve_passage(model, q)
    ref = _mc_passage(20240603, MC_REPS, 1.5, 2, 1.0, _step_ga, 0.4, 1.2,
                      "virtual", _erlang_sampler(4, 2.0))
    assert abs(est - ref) < 0.007


def test_virtual_estimate_downward_passage():
    # target below the start: the level must drain down to b before expiry
    model = _small_model()
    q = PassageQuery(a=0.8, b=0.2, pi0=_busy_pi0(2), theta0=[1.0], tau=2.0,
                     horizon=ErlangHorizon(4), kind="virtual")
    pm = build_virtual_passage_model(model, q)
    assert pm.fluid.unbounded
    assert pm.offset == pytest.approx(0.2)
    est = estimate_virtual_passage(pm, solve_steady(pm.fluid))
    ref = _mc_passage(20240604, MC_REPS, 1.5, 2, 1.0, _step_ga, 0.8, 0.2,
                      "virtual", _erlang_sampler(4, 2.0))
    assert abs(est - ref) < 0.007


def test_cme_horizon_tracks_deterministic_deadline():
    # the concentrated horizon stands in for a fixed deadline
    model = _small_model()
    q = PassageQuery(a=0.0, b=0.6, pi0=_empty_pi0(2), theta0=[1.0], tau=2.0,
                     horizon=CmeHorizon(51), kind="virtual")
    est = solve_passage(model, q)
    ref = _mc_passage(20240605, MC_REPS, 1.5, 2, 1.0, _step_ga, 0.0, 0.6,
                      "virtual", lambda rng: 2.0)
    assert 0.0 <= est <= 1.0
    assert abs(est - ref) < 0.008


# ---------------------------------------------------------------------------
# qualitative properties


def test_monotone_in_deadline_and_target():
    model = _small_model()

    def virt(tau, b):
        q = PassageQuery(a=0.0, b=b, pi0=_empty_pi0(2), theta0=[1.0], tau=tau,
                         horizon=ErlangHorizon(4), kind="virtual")
        return solve_passage(model, q)

    assert virt(1.0, 0.6) < virt(3.0, 0.6) - 1e-3
    assert virt(2.0, 0.9) < virt(2.0, 0.6) - 1e-3


def test_frozen_clock_is_load_bearing():
    # letting the horizon clock run during jumps must change the answer
    model = _small_model()
    q = PassageQuery(a=0.0, b=0.6, pi0=_empty_pi0(2), theta0=[1.0], tau=2.0,
                     horizon=ErlangHorizon(4), kind="virtual")
    frozen = solve_passage(model, q)
    running = solve_passage(model, q, freeze_timer=False)
    assert abs(frozen - running) > 5e-3


# ---------------------------------------------------------------------------
# frozen reference values, correlated-arrivals scenario


def test_reference_virtual_erlang():
    model = _corr_model()
    q = PassageQuery(a=0.0, b=0.25, pi0=_empty_pi0(10), theta0=[1.0, 0.0],
                     tau=1.0, horizon=ErlangHorizon(25), kind="virtual")
    assert solve_passage(model, q) == pytest.approx(0.59251, abs=5e-4)


def test_reference_virtual_cme():
    model = _corr_model()
    q = PassageQuery(a=0.0, b=0.25, pi0=_empty_pi0(10), theta0=[1.0, 0.0],
                     tau=1.0, horizon=CmeHorizon(25), kind="virtual")
    assert solve_passage(model, q) == pytest.approx(0.61705, abs=5e-4)


def test_reference_virtual_second_phase_start():
    model = _corr_model()
    q = PassageQuery(a=0.0, b=1.0, pi0=_empty_pi0(10), theta0=[0.0, 1.0],
                     tau=5.0, horizon=ErlangHorizon(25), kind="virtual")
    assert solve_passage(model, q) == pytest.approx(0.08794, abs=5e-4)


def test_reference_virtual_far_target_is_negligible():
    model = _corr_model()
    q = PassageQuery(a=0.0, b=4.0, pi0=_empty_pi0(10), theta0=[1.0, 0.0],
                     tau=1.0, horizon=ErlangHorizon(25), kind="virtual")
    assert solve_passage(model, q) == pytest.approx(0.0, abs=5e-4)


def test_reference_actual_cme():
    model = _corr_model()
    q = PassageQuery(a=0.0, b=0.25, pi0=_empty_pi0(10), theta0=[1.0, 0.0],
                     tau=1.0, horizon=CmeHorizon(51), kind="actual")
    assert solve_passage(model, q) == pytest.approx(0.52089, abs=5e-4)
