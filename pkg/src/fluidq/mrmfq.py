"""Multi-regime Markov fluid queue representation and steady-state solver.

A model is a fluid level X(t) in [0, T^(K)] driven by a phase process
whose generator and per-state drifts change across level regimes
(T^(k-1), T^(k)), with separate generator/drift pairs at the boundary
levels themselves.  The steady-state law consists of boundary mass
vectors c^(k) and per-regime density vectors f^(k)(x) in matrix
exponential form.

Method: within each regime, zero-drift states are censored out
algebraically, the remaining block satisfies f' = f A with
A = (Q_NN + Q_NZ (-Q_ZZ)^{-1} Q_ZN) R_N^{-1}, and the general solution
is split by an ordered real Schur form of A^T into decaying modes
anchored at the regime's left edge and growing modes anchored at the
right edge.  Mode coefficients and boundary masses are then pinned by
one global sparse linear system: flux continuity into each regime edge,
atom balance at sticky boundary states, and normalization.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import expm, schur

from .arrivals import _gth_stationary

_EPS_ROWSUM = 1e-12
_EPS_SIGN = 1e-12


@dataclass
class MrmfqModel:
    """Fluid queue with K regimes and K+1 boundaries (last may be +inf).

    regime_drifts holds the diagonal of each R^(k) as a vector; states
    where density_mask is False may hold boundary mass but carry no
    density in any regime (their generator columns must receive no flow
    from unmasked states).

    me_blocks admits matrix-exponential blocks: off-diagonal generator
    entries may be negative (row sums must still vanish), and boundary
    masses and densities are allowed to dip below zero, so the
    nonnegativity guards are skipped.
    """

    n: int
    boundaries: np.ndarray
    regime_generators: list
    regime_drifts: list
    boundary_generators: list
    boundary_drifts: list
    density_mask: Optional[np.ndarray] = None
    me_blocks: bool = False

    @property
    def K(self):
        return len(self.regime_generators)

    @property
    def unbounded(self):
        return np.isinf(self.boundaries[-1])


@dataclass
class _RegimeSolution:
    t_left: float
    t_right: float  # may be inf
    nz_idx: np.ndarray  # global state indices of the mode basis
    zero_idx: np.ndarray  # global indices of censored zero-drift states
    Cz: np.ndarray  # censoring map, f_zero = f_nz @ Cz
    a: np.ndarray  # decaying-mode coefficients (left-anchored)
    G_minus: np.ndarray
    Y_minus: np.ndarray
    b: Optional[np.ndarray]  # growing-mode coefficients (right-anchored)
    G_plus: Optional[np.ndarray]
    Y_plus: Optional[np.ndarray]

    def density_nz(self, x):
        f = self.a @ expm(self.G_minus * (x - self.t_left)) @ self.Y_minus
        if self.b is not None and len(self.b):
            f = f + self.b @ expm(self.G_plus * (x - self.t_right)) @ self.Y_plus
        return f


@dataclass
class SteadySolution:
    model: MrmfqModel
    masses: np.ndarray  # (K+1, n); top row zero when unbounded
    regimes: list = field(repr=False)

    def full_density(self, x):
        k = _regime_index(self.model, x)
        reg = self.regimes[k]
        f_nz = reg.density_nz(x)
        out = np.zeros(self.model.n)
        out[reg.nz_idx] = f_nz
        if len(reg.zero_idx):
            out[reg.zero_idx] = f_nz @ reg.Cz
        return out


def _fmt_matrix(M):
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(M))


def validate_model(model: MrmfqModel) -> MrmfqModel:
    """Check structural invariants; raises ValueError naming the offender."""
    n = model.n
    K = model.K
    bnds = np.asarray(model.boundaries, dtype=float)
    if len(bnds) != K + 1:
        raise ValueError(f"expected {K + 1} boundaries for {K} regimes, got {len(bnds)}")
    if not np.all(np.diff(bnds[:-1]) > 0) or not bnds[-1] > bnds[-2]:
        raise ValueError("boundaries must be strictly increasing")
    if bnds[0] != 0.0:
        raise ValueError("lowest boundary must be 0")

    def check_generator(Q, where):
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (n, n):
            raise ValueError(f"{where}: generator must be {n}x{n}")
        scale = max(1.0, np.abs(Q).max())
        if not model.me_blocks:
            off = Q - np.diag(np.diag(Q))
            if off.min() < -_EPS_SIGN * scale or np.diag(Q).max() > _EPS_SIGN * scale:
                raise ValueError(f"{where}: generator sign pattern violated")
        if np.abs(Q.sum(axis=1)).max() > _EPS_ROWSUM * scale * n:
            raise ValueError(f"{where}: generator row sums exceed tolerance")

    for k in range(K):
        check_generator(model.regime_generators[k], f"regime {k + 1}")
        if len(np.asarray(model.regime_drifts[k])) != n:
            raise ValueError(f"regime {k + 1}: drift vector length mismatch")
    for k in range(K + 1):
        Qt, Rt = model.boundary_generators[k], model.boundary_drifts[k]
        if k == K and model.unbounded:
            if Qt is not None or Rt is not None:
                raise ValueError("unbounded models take no generator at the top boundary")
            continue
        if Qt is None or Rt is None:
            raise ValueError(f"boundary {k}: missing generator or drift")
        check_generator(Qt, f"boundary {k}")
    if np.asarray(model.boundary_drifts[0]).min() < 0:
        raise ValueError("boundary 0 admits no strictly negative drift")
    if not model.unbounded and np.asarray(model.boundary_drifts[K]).max() > 0:
        raise ValueError("upper boundary admits no strictly positive drift")

    active = _active(model)
    if not active.all():
        for k in range(K):
            leak = np.abs(np.asarray(model.regime_generators[k])[np.ix_(active, ~active)])
            if leak.size and leak.max() > _EPS_SIGN:
                raise ValueError(
                    f"regime {k + 1}: generator leaks probability into masked states")

    if model.unbounded:
        QK = np.asarray(model.regime_generators[-1])[np.ix_(active, active)]
        RK = np.asarray(model.regime_drifts[-1])[active]
        with np.errstate(invalid="ignore", divide="ignore"):
            pi = _gth_stationary(QK)
        if not np.all(np.isfinite(pi)):
            # reducible final regime: least-squares stationary as fallback
            m = QK.shape[0]
            Asys = np.vstack([QK.T, np.ones(m)])
            bsys = np.zeros(m + 1)
            bsys[m] = 1.0
            pi = np.linalg.lstsq(Asys, bsys, rcond=None)[0]
            if np.abs(Asys @ pi - bsys).max() > 1e-9:
                raise ValueError("final regime generator is reducible; "
                                 "stability cannot be verified")
        if float(pi @ RK) >= -1e-12:
            raise ValueError(
                f"final regime violates stability: mean drift {float(pi @ RK):.3e} >= 0")
    return model


def _active(model):
    if model.density_mask is None:
        return np.ones(model.n, dtype=bool)
    return np.asarray(model.density_mask, dtype=bool)


def expm_poly_integrals(G, L):
    """J_q = integral of t^q e^{Gt} dt over (0, L) for q = 0, 1, 2.

    Computed from one exponential of the block matrix [[G,I,,],[,0,I,],
    [,,0,I],[,,,0]], whose top-row blocks hold the iterated integrals
    of e^{G(L-s)} against 1, s, s^2/2.
    """
    m = G.shape[0]
    M = np.zeros((4 * m, 4 * m))
    M[:m, :m] = G
    for blk in range(3):
        M[blk * m:(blk + 1) * m, (blk + 1) * m:(blk + 2) * m] = np.eye(m)
    F = expm(M * L)
    F12 = F[:m, m:2 * m]
    F13 = F[:m, 2 * m:3 * m]
    F14 = F[:m, 3 * m:]
    J0 = F12
    J1 = L * J0 - F13
    J2 = 2.0 * F14 - L * L * J0 + 2.0 * L * J1
    return J0, J1, J2


def _vanloan_unbounded(G):
    """J_q over (0, inf) for a strictly stable G: q! (-G)^{-(q+1)}."""
    m = G.shape[0]
    J0 = np.linalg.solve(-G, np.eye(m))
    J1 = J0 @ J0
    J2 = 2.0 * J1 @ J0
    return J0, J1, J2


def _ordered_split(A, eps):
    """Two ordered real Schur forms of A^T: (G-, Y-) spanning Re < -eps
    and (G+, Y+) spanning Re >= -eps, in f(t) = a e^{G t} Y convention."""
    T1, V1, sdim1 = schur(A.T, output="real", sort=lambda re, im: re < -eps)
    Gm = T1[:sdim1, :sdim1].T
    Ym = V1[:, :sdim1].T
    T2, V2, sdim2 = schur(A.T, output="real", sort=lambda re, im: re >= -eps)
    Gp = T2[:sdim2, :sdim2].T
    Yp = V2[:, :sdim2].T
    if sdim1 + sdim2 != A.shape[0]:
        raise ValueError(
            f"Schur mode split lost modes ({sdim1}+{sdim2} of {A.shape[0]}); "
            "an eigenvalue sits on the sorting threshold")
    return Gm, Ym, Gp, Yp


def solve_steady(model: MrmfqModel) -> SteadySolution:
    validate_model(model)
    n = model.n
    K = model.K
    bnds = np.asarray(model.boundaries, dtype=float)
    active = _active(model)

    regs = []
    for r in range(K):
        Q = np.asarray(model.regime_generators[r], dtype=float)
        R = np.asarray(model.regime_drifts[r], dtype=float)
        nz_idx = np.where(active & (np.abs(R) > 1e-14))[0]
        zero_idx = np.where(active & (np.abs(R) <= 1e-14))[0]
        if len(nz_idx) == 0:
            raise ValueError(f"regime {r + 1}: no states with nonzero drift")
        Qnn = Q[np.ix_(nz_idx, nz_idx)]
        if len(zero_idx):
            Qzz = Q[np.ix_(zero_idx, zero_idx)]
            Qnz = Q[np.ix_(nz_idx, zero_idx)]
            Qzn = Q[np.ix_(zero_idx, nz_idx)]
            # least squares tolerates disconnected zero-drift states; the
            # residual check still rejects genuinely absorbing blocks
            Cz = np.linalg.lstsq(-Qzz.T, Qnz.T, rcond=None)[0].T
            gap = np.abs(Cz @ (-Qzz) - Qnz).max()
            if gap > 1e-9 * max(1.0, np.abs(Qnz).max()):
                raise ValueError(f"regime {r + 1}: zero-drift states cannot be censored "
                                 "(absorbing block)")
            Acen = Qnn + Cz @ Qzn
        else:
            Cz = np.zeros((len(nz_idx), 0))
            Acen = Qnn
        Rn = R[nz_idx]
        A = Acen / Rn[np.newaxis, :]
        eps = 1e-9 * max(1.0, float(np.linalg.norm(A, np.inf)))
        unbounded_top = r == K - 1 and model.unbounded
        Gm, Ym, Gp, Yp = _ordered_split(A, eps)
        if unbounded_top:
            n_up = int(np.sum(Rn > 0))
            if Gm.shape[0] != n_up:
                raise ValueError(
                    f"final regime: {Gm.shape[0]} decaying modes for {n_up} "
                    "up-drift states; the regime is not ergodic")
            regs.append(_RegimeSolution(bnds[r], np.inf, nz_idx, zero_idx, Cz,
                                        np.zeros(Gm.shape[0]), Gm, Ym, None, None, None))
        else:
            regs.append(_RegimeSolution(bnds[r], bnds[r + 1], nz_idx, zero_idx, Cz,
                                        np.zeros(Gm.shape[0]), Gm, Ym,
                                        np.zeros(Gp.shape[0]), Gp, Yp))

    # unknown layout: per regime [a (, b)], then per finite boundary the
    # masses of its sticky states
    offs = []
    U = 0
    for reg in regs:
        na = reg.G_minus.shape[0]
        nb = 0 if reg.b is None else reg.G_plus.shape[0]
        offs.append((U, U + na, U + na + nb))
        U += na + nb
    c_cols = {}  # (boundary, state) -> column
    trapped = []
    for k in range(K + 1):
        Rt = model.boundary_drifts[k]
        if Rt is None:
            trapped.append(np.array([], dtype=int))
            continue
        tj = np.where(np.asarray(Rt) == 0.0)[0]
        trapped.append(tj)
        for j in tj:
            c_cols[(k, j)] = U
            U += 1

    # edge density maps: rows of [a, b] producing f(edge) over nz states
    left_map, right_map = [], []
    for reg in regs:
        na = reg.G_minus.shape[0]
        if reg.b is None:
            left_map.append(reg.Y_minus)
            right_map.append(None)
        else:
            L = reg.t_right - reg.t_left
            EL = expm(reg.G_minus * L) if na else np.zeros((0, 0))
            ERp = expm(-reg.G_plus * L) if reg.G_plus.shape[0] else np.zeros((0, 0))
            left_map.append(np.vstack([reg.Y_minus, ERp @ reg.Y_plus]))
            right_map.append(np.vstack([EL @ reg.Y_minus, reg.Y_plus]))

    rows, cols, vals = [], [], []
    rhs_rows = []
    m_row_indices = []
    nrow = 0

    def regime_pos(r, j):
        where = np.where(regs[r].nz_idx == j)[0]
        return int(where[0]) if len(where) else -1

    def add_edge_terms(row, r, j, side, scale):
        # scale * f^{(r)}_j(edge) as coefficients on [a, b] of regime r
        pos = regime_pos(r, j)
        if pos < 0 or scale == 0.0:
            return
        mat = left_map[r] if side == "left" else right_map[r]
        lo, mid, hi = offs[r]
        for t, col in enumerate(range(lo, hi)):
            v = mat[t, pos] * scale
            if v != 0.0:
                rows.append(row)
                cols.append(col)
                vals.append(v)

    def add_cq_terms(row, k, j, scale=1.0):
        Qt = np.asarray(model.boundary_generators[k])
        for i in trapped[k]:
            v = Qt[i, j] * scale
            if v != 0.0:
                rows.append(row)
                cols.append(c_cols[(k, i)])
                vals.append(v)

    drift = [np.asarray(d, dtype=float) for d in model.regime_drifts]

    def below_flux(row, k, j, scale):
        # scale * f^{(k-1)}_j(T_k -) R^{(k-1)}_j, if that regime pushes up
        if k >= 1 and active[j] and drift[k - 1][j] > 0:
            add_edge_terms(row, k - 1, j, "right", scale * drift[k - 1][j])

    def above_flux(row, k, j, scale):
        # scale * (-R^{(k)}_j) f^{(k)}_j(T_k +), if the regime above pushes down
        if k <= K - 1 and active[j] and drift[k][j] < 0:
            add_edge_terms(row, k, j, "left", -scale * drift[k][j])

    for k in range(K + 1):
        Rt = model.boundary_drifts[k]
        if Rt is None:
            continue
        Rt = np.asarray(Rt, dtype=float)
        for j in range(n):
            if Rt[j] == 0.0:
                # atom balance: [c Qt]_j plus deposits from either side
                add_cq_terms(nrow, k, j)
                below_flux(nrow, k, j, 1.0)
                above_flux(nrow, k, j, 1.0)
                m_row_indices.append(nrow)
                rhs_rows.append(0.0)
                nrow += 1
                # a trapped atom never advects, so it seals any adjacent
                # edge whose regime pulls away from the boundary
                if k <= K - 1 and active[j] and drift[k][j] > 0:
                    start = len(rows)
                    add_edge_terms(nrow, k, j, "left", drift[k][j])
                    if len(rows) > start:
                        rhs_rows.append(0.0)
                        nrow += 1
                if k >= 1 and active[j] and drift[k - 1][j] < 0:
                    start = len(rows)
                    add_edge_terms(nrow, k - 1, j, "right", -drift[k - 1][j])
                    if len(rows) > start:
                        rhs_rows.append(0.0)
                        nrow += 1
            elif Rt[j] > 0.0:
                absorbing = k <= K - 1 and active[j] and drift[k][j] > 0
                if absorbing:
                    # flux into regime k+1 at its lower edge
                    add_edge_terms(nrow, k, j, "left", drift[k][j])
                    add_cq_terms(nrow, k, j, -1.0)
                    below_flux(nrow, k, j, -1.0)
                    rhs_rows.append(0.0)
                    nrow += 1
                else:
                    # outward flux has nowhere to go; force sources to zero
                    start = len(rows)
                    add_cq_terms(nrow, k, j)
                    below_flux(nrow, k, j, 1.0)
                    if len(rows) > start:
                        rhs_rows.append(0.0)
                        nrow += 1
            else:
                absorbing = k >= 1 and active[j] and drift[k - 1][j] < 0
                if absorbing:
                    # flux into regime k at its upper edge
                    add_edge_terms(nrow, k - 1, j, "right", -drift[k - 1][j])
                    add_cq_terms(nrow, k, j, -1.0)
                    above_flux(nrow, k, j, -1.0)
                    rhs_rows.append(0.0)
                    nrow += 1
                else:
                    start = len(rows)
                    add_cq_terms(nrow, k, j)
                    above_flux(nrow, k, j, 1.0)
                    if len(rows) > start:
                        rhs_rows.append(0.0)
                        nrow += 1

    # normalization: all masses plus all density integrals sum to one
    norm_row = nrow
    for col in c_cols.values():
        rows.append(norm_row)
        cols.append(col)
        vals.append(1.0)
    for r, reg in enumerate(regs):
        w = np.ones(len(reg.nz_idx))
        if len(reg.zero_idx):
            w = w + reg.Cz @ np.ones(len(reg.zero_idx))
        lo, mid, hi = offs[r]
        if reg.b is None:
            coef_a = np.linalg.solve(-reg.G_minus, reg.Y_minus @ w)
            for t, col in enumerate(range(lo, mid)):
                rows.append(norm_row)
                cols.append(col)
                vals.append(coef_a[t])
        else:
            L = reg.t_right - reg.t_left
            na = reg.G_minus.shape[0]
            if na:
                J0m = expm_poly_integrals(reg.G_minus, L)[0]
                coef_a = J0m @ (reg.Y_minus @ w)
                for t, col in enumerate(range(lo, mid)):
                    rows.append(norm_row)
                    cols.append(col)
                    vals.append(coef_a[t])
            if reg.G_plus.shape[0]:
                J0p = expm_poly_integrals(-reg.G_plus, L)[0]
                coef_b = J0p @ (reg.Y_plus @ w)
                for t, col in enumerate(range(mid, hi)):
                    rows.append(norm_row)
                    cols.append(col)
                    vals.append(coef_b[t])
    rhs_rows.append(1.0)
    nrow += 1

    A_full = sp.coo_matrix((vals, (rows, cols)), shape=(nrow, U)).tocsr()
    b_full = np.asarray(rhs_rows)

    # equilibrate large rows (matrix-exponential blocks can inject huge
    # coefficients) so the residual test keeps a per-equation meaning
    row_max = np.maximum(1.0, np.abs(A_full).max(axis=1).toarray().ravel())
    A_full = sp.diags(1.0 / row_max) @ A_full
    b_full = b_full / row_max

    x = None
    if nrow == U + 1:
        # square after swapping one redundant balance row for normalization
        drop = m_row_indices[0] if m_row_indices else 0
        keep = [i for i in range(nrow) if i != drop]
        A_sq = A_full[keep]
        b_sq = b_full[keep]
        try:
            lu = spla.splu(A_sq.tocsc())
            x = lu.solve(b_sq)
        except RuntimeError:
            x = None
        if x is not None and not np.all(np.isfinite(x)):
            x = None
    if x is None:
        res = spla.lsqr(A_full, b_full, atol=1e-14, btol=1e-14, iter_lim=20 * U)
        x = res[0]

    resid = np.abs(A_full @ x - b_full)
    scale = max(1.0, float(np.abs(x).max()))
    if resid.max() > 1e-8 * scale:
        cond = f"{np.linalg.cond(A_full.toarray()):.3e}" if U <= 1500 else "not computed"
        raise ValueError(
            f"assembled boundary system is singular or ill-conditioned: "
            f"residual {resid.max():.3e}, condition estimate {cond}")

    for r, reg in enumerate(regs):
        lo, mid, hi = offs[r]
        reg.a = x[lo:mid]
        if reg.b is not None:
            reg.b = x[mid:hi]
    masses = np.zeros((K + 1, n))
    for (k, j), col in c_cols.items():
        masses[k, j] = x[col]
    if not model.me_blocks:
        if masses.min() < -1e-6:
            raise ValueError(f"boundary mass {masses.min():.3e} is negative beyond tolerance")
        if masses.min() < -1e-12:
            warnings.warn(f"clamping slightly negative boundary mass {masses.min():.3e}")
        masses = np.maximum(masses, 0.0)

    sol = SteadySolution(model=model, masses=masses, regimes=regs)
    _self_check(sol)
    return sol


def _self_check(sol):
    model = sol.model
    if model.me_blocks:
        return
    for r, reg in enumerate(sol.regimes):
        hi = reg.t_right if np.isfinite(reg.t_right) else reg.t_left + 5.0
        span = hi - reg.t_left
        for frac in (0.13, 0.5, 0.87):
            xx = reg.t_left + frac * span
            f = sol.full_density(xx)
            if f.min() < -1e-6:
                raise ValueError(
                    f"regime {r + 1}: density {f.min():.3e} negative beyond tolerance")
            if f.min() < -1e-9:
                warnings.warn(f"regime {r + 1}: slightly negative density {f.min():.3e}")


def _regime_index(model, x):
    bnds = np.asarray(model.boundaries, dtype=float)
    if x < 0 or x >= bnds[-1]:
        raise ValueError(f"level {x} outside [0, {bnds[-1]})")
    fin = bnds[np.isfinite(bnds)]
    if np.any(fin == x):
        raise ValueError(f"level {x} is a boundary; masses live there")
    return int(np.searchsorted(bnds, x) - 1)


def pdf_at(sol: SteadySolution, x: float) -> np.ndarray:
    """Density vector f(x) of the regime containing x."""
    return sol.full_density(x)


def mass_at(sol: SteadySolution, x: float) -> np.ndarray:
    """Probability mass vector at the boundary level x."""
    bnds = np.asarray(sol.model.boundaries, dtype=float)
    tol = 1e-9 * max(1.0, abs(x))
    for k in range(len(bnds)):
        if np.isfinite(bnds[k]) and abs(bnds[k] - x) <= tol:
            return sol.masses[k].copy()
    raise ValueError(f"no boundary at level {x}; masses exist only at boundaries")


def weighted_regime_integral(sol: SteadySolution, k: int, poly, vector) -> float:
    """integral over regime k (1-based) of f(x) . vector times p(x).

    p(x) = poly[0] + poly[1] x + poly[2] x^2 evaluated in absolute level
    coordinates; closed form via matrix-exponential moment blocks.
    """
    if not 1 <= k <= sol.model.K:
        raise ValueError(f"regime index {k} out of range")
    if len(poly) > 3:
        raise ValueError("polynomial weights supported up to degree 2")
    reg = sol.regimes[k - 1]
    vector = np.asarray(vector, dtype=float)
    w = vector[reg.nz_idx].copy()
    if len(reg.zero_idx):
        w = w + reg.Cz @ vector[reg.zero_idx]
    p = np.polynomial.Polynomial(list(poly))
    total = 0.0
    if reg.b is None:
        Js = _vanloan_unbounded(reg.G_minus)
        pl = p(np.polynomial.Polynomial([reg.t_left, 1.0]))
        M = sum(c * Js[q] for q, c in enumerate(pl.coef))
        total += float(reg.a @ M @ (reg.Y_minus @ w))
        return total
    L = reg.t_right - reg.t_left
    if reg.G_minus.shape[0]:
        Js = expm_poly_integrals(reg.G_minus, L)
        pl = p(np.polynomial.Polynomial([reg.t_left, 1.0]))
        M = sum(c * Js[q] for q, c in enumerate(pl.coef))
        total += float(reg.a @ M @ (reg.Y_minus @ w))
    if reg.G_plus.shape[0]:
        Js = expm_poly_integrals(-reg.G_plus, L)
        pr = p(np.polynomial.Polynomial([reg.t_right, -1.0]))
        M = sum(c * Js[q] for q, c in enumerate(pr.coef))
        total += float(reg.b @ M @ (reg.Y_plus @ w))
    return total


def weighted_regime_integral_upto(sol: SteadySolution, k: int, poly, vector,
                                  upper: float) -> float:
    """Like weighted_regime_integral, but over (t_left, min(upper, t_right))."""
    if not 1 <= k <= sol.model.K:
        raise ValueError(f"regime index {k} out of range")
    if len(poly) > 3:
        raise ValueError("polynomial weights supported up to degree 2")
    reg = sol.regimes[k - 1]
    if upper >= reg.t_right:
        return weighted_regime_integral(sol, k, poly, vector)
    if upper <= reg.t_left:
        return 0.0
    vector = np.asarray(vector, dtype=float)
    w = vector[reg.nz_idx].copy()
    if len(reg.zero_idx):
        w = w + reg.Cz @ vector[reg.zero_idx]
    p = np.polynomial.Polynomial(list(poly))
    total = 0.0
    if reg.G_minus.shape[0]:
        Js = expm_poly_integrals(reg.G_minus, upper - reg.t_left)
        pl = p(np.polynomial.Polynomial([reg.t_left, 1.0]))
        M = sum(c * Js[q] for q, c in enumerate(pl.coef))
        total += float(reg.a @ M @ (reg.Y_minus @ w))
    if reg.b is not None and reg.G_plus.shape[0]:
        L = reg.t_right - reg.t_left
        Jfull = expm_poly_integrals(-reg.G_plus, L)
        Jcut = expm_poly_integrals(-reg.G_plus, reg.t_right - upper)
        pr = p(np.polynomial.Polynomial([reg.t_right, -1.0]))
        M = sum(c * (Jfull[q] - Jcut[q]) for q, c in enumerate(pr.coef))
        total += float(reg.b @ M @ (reg.Y_plus @ w))
    return total


def cdf_at(sol: SteadySolution, x: float) -> float:
    """P{X <= x}, including any boundary atom exactly at x."""
    model = sol.model
    bnds = np.asarray(model.boundaries, dtype=float)
    if x < 0:
        return 0.0
    total = 0.0
    ones = np.ones(model.n)
    for k in range(len(bnds)):
        if np.isfinite(bnds[k]) and bnds[k] <= x + 1e-15:
            total += sol.masses[k].sum()
    for r in range(model.K):
        total += weighted_regime_integral_upto(sol, r + 1, (1.0,), ones, x)
    return total


def dump_model(model: MrmfqModel, path) -> None:
    """Write the model matrices as plain text for inspection."""
    with open(path, "w") as fh:
        fh.write(f"phases {model.n}\nregimes {model.K}\n")
        fh.write("boundaries " + " ".join(f"{b:.17g}" for b in model.boundaries) + "\n")
        for k in range(model.K):
            fh.write(f"\nregime {k + 1} generator\n")
            fh.write(_fmt_matrix(model.regime_generators[k]) + "\n")
            fh.write(f"regime {k + 1} drift\n")
            fh.write(_fmt_matrix(model.regime_drifts[k]) + "\n")
        for k in range(model.K + 1):
            if model.boundary_generators[k] is None:
                continue
            fh.write(f"\nboundary {k} generator\n")
            fh.write(_fmt_matrix(model.boundary_generators[k]) + "\n")
            fh.write(f"boundary {k} drift\n")
            fh.write(_fmt_matrix(model.boundary_drifts[k]) + "\n")


def dump_solution(sol: SteadySolution, path) -> None:
    """Write boundary masses and mode data as plain text for inspection."""
    with open(path, "w") as fh:
        for k in range(sol.model.K + 1):
            fh.write(f"boundary {k} masses\n")
            fh.write(_fmt_matrix(sol.masses[k]) + "\n")
        for r, reg in enumerate(sol.regimes):
            fh.write(f"\nregime {r + 1} left coefficients\n")
            fh.write(_fmt_matrix(reg.a) + "\n")
            fh.write(f"regime {r + 1} decaying modes\n")
            fh.write(_fmt_matrix(reg.G_minus) + "\n")
            if reg.b is not None:
                fh.write(f"regime {r + 1} right coefficients\n")
                fh.write(_fmt_matrix(reg.b) + "\n")
                fh.write(f"regime {r + 1} growing modes\n")
                fh.write(_fmt_matrix(reg.G_plus) + "\n")
