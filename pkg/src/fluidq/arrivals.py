"""Markovian arrival processes and time-horizon distributions.

A MAP of order m is a pair (C, D): C holds the phase transition rates
without an arrival (negative diagonal), D the rates accompanied by an
arrival, and C + D is an irreducible generator.  Phase-type (PH) and
matrix-exponential (ME) pairs (beta, B) describe the horizon
distributions used by the first-passage solvers.
"""

import importlib.resources
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm


@dataclass
class MapProcess:
    C: np.ndarray
    D: np.ndarray

    @property
    def order(self):
        return self.C.shape[0]


@dataclass
class StationaryVectors:
    alpha: np.ndarray        # stationary vector of the generator C+D
    pi_embedded: np.ndarray  # phase distribution right after an arrival
    rate: float              # mean arrival rate
    d_star: np.ndarray       # per-phase arrival rate vector D e


@dataclass
class PhDistribution:
    beta: np.ndarray
    B: np.ndarray

    @property
    def order(self):
        return self.B.shape[0]

    @property
    def exit_vector(self):
        return -self.B @ np.ones(self.order)


@dataclass
class MeDistribution:
    """Same algebraic form as PH, without sign constraints on (beta, B)."""

    beta: np.ndarray
    B: np.ndarray

    @property
    def order(self):
        return self.B.shape[0]

    @property
    def exit_vector(self):
        return -self.B @ np.ones(self.order)


def validate_map(C, D, tol=1e-12):
    """Check the structural MAP constraints and return a MapProcess.

    Raises ValueError describing the first violated constraint.
    """
    C = np.asarray(C, dtype=float)
    D = np.asarray(D, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape != D.shape:
        raise ValueError("C and D must be square matrices of equal size")
    m = C.shape[0]
    if np.any(np.diag(C) >= 0):
        raise ValueError("diagonal of C must be strictly negative")
    off = ~np.eye(m, dtype=bool)
    if np.any(C[off] < -tol):
        raise ValueError("off-diagonal entries of C must be nonnegative")
    if np.any(D < -tol):
        raise ValueError("entries of D must be nonnegative")
    E = C + D
    if np.max(np.abs(E @ np.ones(m))) > 1e-10:
        raise ValueError("row sums of C+D must vanish")
    if not _strongly_connected(E, tol):
        raise ValueError("C+D must be irreducible")
    return MapProcess(C=C, D=D)


def _strongly_connected(E, tol):
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components

    adj = (E > tol).astype(int)
    np.fill_diagonal(adj, 0)
    ncomp, _ = connected_components(csr_matrix(adj), connection="strong")
    return ncomp == 1


def _gth_stationary(Q):
    """Stationary vector of a small irreducible generator, GTH elimination."""
    A = np.array(Q, dtype=float)
    n = A.shape[0]
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        A[:k, :k] += np.outer(A[:k, k], A[k, :k]) / s
    x = np.zeros(n)
    x[0] = 1.0
    for k in range(1, n):
        x[k] = (x[:k] @ A[:k, k]) / A[k, :k].sum()
    return x / x.sum()


def stationary_vectors(m: MapProcess) -> StationaryVectors:
    alpha = _gth_stationary(m.C + m.D)
    d_star = m.D @ np.ones(m.order)
    rate = float(alpha @ d_star)
    pi = (alpha @ m.D) / rate
    return StationaryVectors(alpha=alpha, pi_embedded=pi, rate=rate,
                             d_star=d_star)


def ph_cdf(dist, x):
    """F(x) = 1 - beta e^{Bx} e for PH or ME pairs; scalar or 1-d x."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    e = np.ones(dist.order)
    out = np.array([1.0 - dist.beta @ expm(dist.B * t) @ e for t in xs])
    return out if np.ndim(x) else float(out[0])


def ph_density(dist, x):
    """f(x) = -beta e^{Bx} B e for PH or ME pairs; scalar or 1-d x."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    exit_v = dist.exit_vector
    out = np.array([dist.beta @ expm(dist.B * t) @ exit_v for t in xs])
    return out if np.ndim(x) else float(out[0])


def me_check_density(me, grid, neg_tol=-1e-12, mass_tol=1e-6):
    """Numerically validate an ME pair on a uniform grid.

    Checks beta e = 1, pointwise density >= neg_tol, and unit mass by
    trapezoid quadrature over the grid.  Returns (ok, worst_density).
    """
    grid = np.asarray(grid, dtype=float)
    step = grid[1] - grid[0]
    if np.max(np.abs(np.diff(grid) - step)) > 1e-9 * step:
        raise ValueError("validation grid must be uniform")
    prop = expm(me.B * step)
    exit_v = me.exit_vector
    v = me.beta @ expm(me.B * grid[0])
    dens = np.empty(grid.shape)
    for i in range(grid.size):
        dens[i] = v @ exit_v
        v = v @ prop
    worst = float(dens.min())
    mass = float(trapezoid(dens, grid))
    tail = float(1.0 - ph_cdf(me, grid[-1]))
    ok = (abs(me.beta.sum() - 1.0) < 1e-9
          and worst >= neg_tol
          and abs(mass + tail - 1.0) < mass_tol)
    return ok, worst


# Two-state source used by the superposed arrival stream: switches
# low->high at rate 0.25 and high->low at rate 1, emitting arrivals at
# rate 0.5 (low) and 3 (high); each source then has unit mean rate.
_SRC_UP = 0.25
_SRC_DOWN = 1.0
_SRC_RATE_LOW = 0.5
_SRC_RATE_HIGH = 3.0


def build_superposed_mmpp(k: int) -> MapProcess:
    """Superposition of k iid two-state sources, lumped by the number of
    sources in the high state (order k+1)."""
    if k < 1:
        raise ValueError("need at least one source")
    n = np.arange(k + 1)
    birth = (k - n) * _SRC_UP
    death = n * _SRC_DOWN
    rates = (k - n) * _SRC_RATE_LOW + n * _SRC_RATE_HIGH
    C = np.diag(birth[:-1], 1) + np.diag(death[1:], -1)
    C -= np.diag(birth + death + rates)
    D = np.diag(rates.astype(float))
    return validate_map(C, D)


def hyperexp_balanced_means(mean: float, scv: float):
    """Two-phase hyperexponential (v, T) with the given mean and SCV,
    balanced so that v_i / mu_i are equal."""
    if scv <= 1.0:
        raise ValueError("balanced hyperexponential needs scv > 1")
    p = 0.5 * (1.0 + np.sqrt((scv - 1.0) / (scv + 1.0)))
    v = np.array([p, 1.0 - p])
    T = np.diag([-2.0 * p / mean, -2.0 * (1.0 - p) / mean])
    return v, T


def build_correlated_map(v, T, psi: float) -> MapProcess:
    """Introduce geometric lag autocorrelation (parameter psi) into the
    PH renewal process (v, T) without changing its marginal."""
    if not 0.0 <= psi < 1.0:
        raise ValueError("psi must lie in [0, 1)")
    v = np.asarray(v, dtype=float)
    T = np.asarray(T, dtype=float)
    e = np.ones(T.shape[0])
    D = (1.0 - psi) * np.outer(-T @ e, v) - psi * T
    return validate_map(T, D)


def erlang_horizon(order: int, tau: float) -> PhDistribution:
    """Erlang distribution with the given order and mean tau (SCV 1/order)."""
    if order < 1 or tau <= 0:
        raise ValueError("order must be >= 1 and tau > 0")
    rate = order / tau
    B = rate * (np.diag(np.full(order - 1, 1.0), 1) - np.eye(order))
    beta = np.zeros(order)
    beta[0] = 1.0
    return PhDistribution(beta=beta, B=B)


def _hypercos_harmonics(omega, phis):
    """Laurent coefficients gamma_{-n..n} of prod_i cos^2((omega t - phi_i)/2)
    as a function of z = e^{i omega t}."""
    gam = np.array([1.0 + 0j])
    for phi in phis:
        nxt = np.zeros(gam.size + 2, dtype=complex)
        nxt[1:-1] = 0.5 * gam
        nxt[2:] += 0.25 * np.exp(-1j * phi) * gam
        nxt[:-2] += 0.25 * np.exp(1j * phi) * gam
        gam = nxt
    return gam  # index k = i - n for entry i


def _hypercos_moments(omega, phis, nmom=3):
    """Raw moments (mu_0..mu_nmom) of f(t) = e^{-t} prod_i cos^2(...) dt."""
    gam = _hypercos_harmonics(omega, phis)
    n = len(phis)
    k = np.arange(-n, n + 1)
    denom = 1.0 - 1j * k * omega
    moms = []
    fact = 1.0
    for r in range(nmom + 1):
        moms.append(float(np.real(np.sum(gam * fact / denom ** (r + 1)))))
        fact *= r + 1
    return moms


def _hypercos_me(omega, phis, cnorm):
    """Unit-rate ME pair (beta, B) for c e^{-t} prod_i cos^2((omega t-phi_i)/2)."""
    gam = _hypercos_harmonics(omega, phis)
    n = len(phis)
    order = 2 * n + 1
    beta = np.zeros(order)
    B = np.zeros((order, order))
    B[0, 0] = -1.0
    beta[0] = cnorm * float(np.real(gam[n]))  # gamma_0 / lambda with lambda=1
    for k in range(1, n + 1):
        a = 2.0 * cnorm * float(np.real(gam[n + k]))
        b = -2.0 * cnorm * float(np.imag(gam[n + k]))
        i = 2 * k - 1
        B[i, i] = B[i + 1, i + 1] = -1.0
        B[i, i + 1] = k * omega
        B[i + 1, i] = -k * omega
        lo, hi = 1.0 - k * omega, 1.0 + k * omega
        det = -(lo * lo + hi * hi)
        beta[i] = (-lo * a - hi * b) / det
        beta[i + 1] = (-hi * a + lo * b) / det
    return beta, B


def _load_cme_table(order):
    ref = importlib.resources.files("fluidq") / "data" / f"cme_{order}.txt"
    try:
        text = ref.read_text()
    except FileNotFoundError:
        raise ValueError(f"no concentrated-horizon table for order {order}")
    params = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, *vals = line.split()
        params[name] = [float(s) for s in vals]
    return params


def cme_horizon(order: int, tau: float, coefficients=None) -> MeDistribution:
    """Concentrated matrix-exponential horizon with mean tau.

    Coefficients default to the tables shipped with the package
    (one plain-text file per order, see data/README inside the package).
    """
    if coefficients is None:
        coefficients = _load_cme_table(order)
    if int(coefficients["order"][0]) != order:
        raise ValueError("coefficient table order mismatch")
    omega = coefficients["omega"][0]
    cnorm = coefficients["cnorm"][0]
    phis = coefficients["phi"]
    if 2 * len(phis) + 1 != order:
        raise ValueError("coefficient table is inconsistent")
    beta, B = _hypercos_me(omega, phis, cnorm)
    beta /= beta.sum()  # kill rounding in the stored cnorm
    if "mean" in coefficients:
        mean = coefficients["mean"][0]
    else:
        m0, m1 = _hypercos_moments(omega, phis, 1)
        mean = m1 / m0  # mean of the normalized unit-rate density
    # the harmonic expansion coefficients scale with the normalization
    # constant; once that exceeds the double-precision range the pair
    # cannot reproduce the density, so refuse rather than return noise
    m1_realized = float(beta @ np.linalg.solve(-B, np.ones(order)))
    if abs(m1_realized - mean) > 1e-4 * mean:
        raise ValueError(
            f"order {order} concentrated horizon is not representable in "
            f"double precision (normalization constant {cnorm:.2e}); "
            "use order 25 or 51")
    return MeDistribution(beta=beta, B=B * (mean / tau))
