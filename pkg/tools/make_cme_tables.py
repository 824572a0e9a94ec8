"""Offline generator for the concentrated matrix-exponential horizon tables.

Minimizes the squared coefficient of variation of

    f(t) = c * exp(-t) * prod_{i=1..n} cos^2((omega*t - phi_i)/2)

over (omega, phi_1..phi_n) for order 2n+1, and writes the winning
parameters to src/fluidq/data/cme_<order>.txt.  Run from the repo root:

    python tools/make_cme_tables.py [orders...]
"""

import pathlib
import sys

import numpy as np
from scipy.optimize import minimize

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from fluidq.arrivals import _hypercos_harmonics  # noqa: E402, F401

DATA = pathlib.Path(__file__).resolve().parent.parent / "src/fluidq/data"


PENALTY = 10.0


def scv_of(omega, phis):
    """SCV of f(t) = e^{-t} prod_i cos^2((omega t - phi_i)/2) by direct
    quadrature of the (pointwise nonnegative) density.

    The harmonic-sum moment formulas cancel catastrophically at high
    order, while pointwise evaluation of f is exact to machine epsilon;
    Simpson quadrature with a smooth O(h^4) bias is plenty for the
    optimizer, and the shipped winner is re-verified in mpmath anyway.
    """
    n = len(phis)
    phis = np.asarray(phis)
    # locate the dominant bump to size the integration window
    coarse = np.linspace(0.0, 250.0, 5001)
    fc = _density(coarse, omega, phis)
    tstar = coarse[np.argmax(fc)]
    hi = tstar + 60.0
    step = min(np.pi / (n * omega), 1.0) / 8.0
    npts = int(hi / step) | 1
    t = np.linspace(0.0, hi, npts + 1)
    f = _density(t, omega, phis)
    w = np.ones(npts + 1)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    w *= (t[1] - t[0]) / 3.0
    m0 = w @ f
    if not m0 > 1e-280:
        return PENALTY
    mu = (w @ (t * f)) / m0
    var = (w @ ((t - mu) ** 2 * f)) / m0
    scv = var / (mu * mu)
    if not 0.0 < scv < PENALTY:
        return PENALTY
    return scv


def _density(t, omega, phis):
    f = np.exp(-t)
    for phi in phis:
        f *= np.cos((omega * t - phi) / 2.0) ** 2
    return f


def moments_mpmath(omega, phis, dps=60):
    """Reference scv, mean and mass in high-precision arithmetic.

    Slow, used only to certify a finished table: the shipped cnorm and
    mean come from here, never from the cancelling float64 sums.
    """
    import mpmath as mp

    with mp.workdps(dps):
        om = mp.mpf(repr(float(omega)))
        gam = [mp.mpc(1)]
        for phi in phis:
            phi = mp.mpf(repr(float(phi)))
            nxt = [mp.mpc(0)] * (len(gam) + 2)
            for i, g in enumerate(gam):
                nxt[i + 1] += g / 2
                nxt[i + 2] += g * mp.exp(-1j * phi) / 4
                nxt[i] += g * mp.exp(1j * phi) / 4
            gam = nxt
        n = len(phis)
        m0 = m1 = m2 = mp.mpf(0)
        for idx in range(2 * n + 1):
            den = 1 - 1j * (idx - n) * om
            g = gam[idx]
            m0 += (g / den).real
            m1 += (g / den**2).real
            m2 += (2 * g / den**3).real
        scv = float(m0 * m2 / m1**2 - 1)
        return scv, float(m1 / m0), float(1 / m0)


def scv_linear(params, n):
    omega, phi_a, dphi = params
    if omega <= 0:
        return PENALTY
    return scv_of(omega, phi_a + dphi * np.arange(n))


def scv_full(params):
    omega = params[0]
    if omega <= 0:
        return PENALTY
    return scv_of(omega, params[1:])


def optimize_order(order, seed=12345):
    n = (order - 1) // 2

    # stage 1: coarse grid over a linear phase profile phi_i = phi_a + i*dphi
    cands = []
    for omega in np.geomspace(0.02, 2.0, 40):
        for dphi in np.linspace(-0.6, 0.6, 25):
            for phi_a in np.linspace(0.0, 2 * np.pi, 9)[:-1]:
                val = scv_linear((omega, phi_a, dphi), n)
                if val < PENALTY:
                    cands.append((val, omega, phi_a, dphi))
    cands.sort(key=lambda t: t[0])

    # refine the best grid points within the linear profile
    seeds = []
    for val, omega, phi_a, dphi in cands[:12]:
        res = minimize(scv_linear, np.array([omega, phi_a, dphi]), args=(n,),
                       method="Nelder-Mead",
                       options={"maxiter": 6000, "fatol": 1e-15,
                                "xatol": 1e-12})
        seeds.append((res.fun, res.x))
    seeds.sort(key=lambda t: t[0])

    # stage 2: free all phases, polish from the best linear profiles
    best_x, best_f = None, np.inf
    for fun0, (omega, phi_a, dphi) in seeds[:4]:
        cur = np.concatenate([[omega], phi_a + dphi * np.arange(n)])
        fun = scv_full(cur)
        for _ in range(4):
            res = minimize(scv_full, cur, method="Powell",
                           options={"maxiter": 400000, "ftol": 1e-16,
                                    "xtol": 1e-13})
            improved = res.fun < fun - 1e-15
            cur, fun = res.x, min(res.fun, fun)
            if not improved:
                break
        if fun < best_f:
            best_x, best_f = cur, fun

    # trust nothing: confirm the winner in high-precision arithmetic
    ref, mean, cnorm = moments_mpmath(best_x[0], best_x[1:])
    if not abs(ref - best_f) < 0.05 * ref:
        raise RuntimeError(
            f"order {order}: quadrature scv {best_f:.3e} disagrees with "
            f"reference {ref:.3e}")
    return best_x[0], np.asarray(best_x[1:]), ref, mean, cnorm


def write_table(order, omega, phis, scv, mean, cnorm):
    path = DATA / f"cme_{order}.txt"
    with open(path, "w") as fh:
        fh.write("# concentrated matrix-exponential horizon table\n")
        fh.write(f"order {order}\n")
        fh.write(f"scv {scv:.17g}\n")
        fh.write(f"omega {omega:.17g}\n")
        fh.write(f"cnorm {cnorm:.17g}\n")
        fh.write(f"mean {mean:.17g}\n")
        fh.write("phi " + " ".join(f"{p:.17g}" for p in phis) + "\n")
    print(f"order {order}: scv = {scv:.6e}  (2/l^2 = {2 / order**2:.6e}) "
          f"-> {path.name}")


def main():
    orders = [int(a) for a in sys.argv[1:]] or [25, 51, 101]
    for order in orders:
        omega, phis, scv, mean, cnorm = optimize_order(order)
        write_table(order, omega, phis, scv, mean, cnorm)


if __name__ == "__main__":
    main()
