"""Pure-Python implementation of the cell step and hour-loop kernels.

This is the fallback used when the compiled ``_kernel`` extension is not
available. Both backends implement the same algorithm and share the layout
of the packed parameter vector defined in :mod:`battmpc.kernel`.

Per step the implicit backward-Euler system is reduced to two unknowns, the
applied current ``I`` and ``l = log(-J_sd)``; every other state and algebraic
quantity is an explicit function of those two.
"""

import math
from bisect import bisect_right

import numpy as np

# packed parameter layout (keep in sync with _kernel.pyx)
P_F, P_R, P_T, P_CE = 0, 1, 2, 3
P_DN, P_RN, P_KN, P_CNMAX, P_SN = 4, 5, 6, 7, 8
P_DP, P_RP, P_KP, P_CPMAX, P_SP = 9, 10, 11, 12, 13
P_I0SD, P_UREF, P_MSD, P_RHOSD, P_KAPPA, P_RSEI = 14, 15, 16, 17, 18, 19
P_QMAX, P_EMAX = 20, 21
N_PARAMS = 22

# step status codes
OK = 0
OVERCHARGE = 1
OVERDISCHARGE = 2
NONCONVERGENCE = 3
DOMAIN = 4

# trace columns written by simulate_steps
(COL_E, COL_V, COL_CR, COL_CF, COL_DF, COL_CN, COL_CP, COL_I, COL_JSD,
 COL_PHIN, COL_PHIP) = range(11)
N_COLS = 11


class _Ocv:
    __slots__ = ("x", "c0", "c1", "c2", "c3", "m")

    def __init__(self, breaks, coefs):
        self.x = [float(v) for v in breaks]
        coefs = np.asarray(coefs, dtype=float)
        self.c0, self.c1, self.c2, self.c3 = (list(map(float, row)) for row in coefs)
        self.m = len(self.x) - 1

    def __call__(self, t):
        i = bisect_right(self.x, t) - 1
        if i < 0:
            i = 0
        elif i >= self.m:
            i = self.m - 1
        dx = t - self.x[i]
        a, b, c, d = self.c0[i], self.c1[i], self.c2[i], self.c3[i]
        return ((a * dx + b) * dx + c) * dx + d, (3.0 * a * dx + 2.0 * b) * dx + c


def _exp(x):
    # C's exp saturates to inf instead of raising
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _asinh_term(J, cs, cmax, kF_sqrtce, two_over_f):
    """Overpotential from inverted Butler-Volmer and its partials (J, cs)."""
    i0 = kF_sqrtce * math.sqrt((cmax - cs) * cs)
    z = J / (2.0 * i0)
    root = math.sqrt(1.0 + z * z)
    eta = two_over_f * math.asinh(z)
    deta_dJ = two_over_f / (root * 2.0 * i0)
    di0_dcs = i0 * (cmax - 2.0 * cs) / (2.0 * (cmax - cs) * cs)
    deta_dcs = -two_over_f * z / root * di0_dcs / i0
    return eta, deta_dJ, deta_dcs


class _Point:
    """Everything at the end of one step for a trial (I, l)."""

    __slots__ = ("ok", "r1", "r2", "a11", "a12", "a21", "a22", "cn1", "cp1",
                 "df1", "cf1", "jsd", "phin", "phip", "V", "E", "Cr")


def _evaluate(I, l, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, out):
    F = p[P_F]
    f = F / (p[P_R] * p[P_T])
    two_over_f = 2.0 / f
    sqrt_ce = math.sqrt(p[P_CE])
    Rn, Dn, cnmax, Sn = p[P_RN], p[P_DN], p[P_CNMAX], p[P_SN]
    Rp, Dp, cpmax, Sp = p[P_RP], p[P_DP], p[P_CPMAX], p[P_SP]

    if active:
        jsd = -_exp(l)
        djsd_dl = jsd
    else:
        jsd = 0.0
        djsd_dl = 0.0

    # positive electrode
    Jp = I / Sp
    cp1 = cp - 3.0 * Jp * dt / (Rp * F)
    acoef_p = -3.0 * dt / (Rp * F) - Rp / (5.0 * Dp * F)
    csp = cp1 - Jp * Rp / (5.0 * Dp * F)
    # negative electrode
    Jn = -I / Sn - jsd
    cn1 = cn - 3.0 * Jn * dt / (Rn * F)
    acoef_n = -3.0 * dt / (Rn * F) - Rn / (5.0 * Dn * F)
    csn = cn1 - Jn * Rn / (5.0 * Dn * F)
    out.ok = 0.0 < csn < cnmax and 0.0 < csp < cpmax
    if not out.ok:
        return out

    # film
    dfac = -p[P_MSD] * dt / (p[P_RHOSD] * F)
    df1 = df + jsd * dfac
    Rf = p[P_RSEI] + df1 / p[P_KAPPA]
    dRf_dl = djsd_dl * dfac / p[P_KAPPA]

    etap, dep_dJ, dep_dcs = _asinh_term(Jp, csp, cpmax, p[P_KP] * F * sqrt_ce, two_over_f)
    etan, den_dJ, den_dcs = _asinh_term(Jn, csn, cnmax, p[P_KN] * F * sqrt_ce, two_over_f)
    Up, dUp = ocv_p(csp / cpmax)
    Un, dUn = ocv_n(csn / cnmax)

    # d/dI and d/dl of the negative-electrode potential chain
    dJn_dI = -1.0 / Sn
    dJn_dl = -djsd_dl
    dcsn_dI = acoef_n * dJn_dI
    dcsn_dl = acoef_n * dJn_dl
    deta_n_dI = den_dJ * dJn_dI + den_dcs * dcsn_dI
    deta_n_dl = den_dJ * dJn_dl + den_dcs * dcsn_dl
    dUn_dI = dUn * dcsn_dI / cnmax
    dUn_dl = dUn * dcsn_dl / cnmax

    phip = Up + etap
    dphip_dI = dUp * acoef_p / (Sp * cpmax) + dep_dJ / Sp + dep_dcs * acoef_p / Sp
    phin = Un + etan - Rf * I / Sn
    dphin_dI = dUn_dI + deta_n_dI - Rf / Sn
    dphin_dl = dUn_dl + deta_n_dl - dRf_dl * I / Sn

    V = phip - phin
    out.r2 = I * V / 1e6 - P
    out.a21 = (V + I * (dphip_dI - dphin_dI)) / 1e6
    out.a22 = -I * dphin_dl / 1e6

    if active:
        eta_sd = Un + etan - p[P_UREF]
        out.r1 = l - math.log(p[P_I0SD]) + f * eta_sd
        out.a11 = f * (dUn_dI + deta_n_dI)
        out.a12 = 1.0 + f * (dUn_dl + deta_n_dl)
    else:
        out.r1 = 0.0
        out.a11 = 0.0
        out.a12 = 1.0

    out.cn1 = cn1
    out.cp1 = cp1
    out.df1 = df1
    out.Cr = -jsd * Sn / p[P_QMAX]
    out.cf1 = cf + out.Cr * dt
    out.jsd = jsd
    out.phin = phin
    out.phip = phip
    out.V = V
    out.E = cn1 / cnmax * p[P_EMAX]
    return out


def _norm(pt):
    return max(abs(pt.r1), abs(pt.r2))


def _newton(I, l, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol, maxit):
    pt = _evaluate(I, l, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, _Point())
    if not pt.ok:
        return None, I, l
    for _ in range(maxit):
        res = _norm(pt)
        if res <= tol:
            return pt, I, l
        if active:
            det = pt.a11 * pt.a22 - pt.a12 * pt.a21
            if det == 0.0 or not math.isfinite(det):
                return None, I, l
            dI = -(pt.a22 * pt.r1 - pt.a12 * pt.r2) / det
            dl = -(-pt.a21 * pt.r1 + pt.a11 * pt.r2) / det
        else:
            if pt.a21 == 0.0:
                return None, I, l
            dI = -pt.r2 / pt.a21
            dl = 0.0
        step = 1.0
        accepted = False
        while step > 1e-6:
            trial = _evaluate(I + step * dI, l + step * dl, active, cn, cp, df, cf,
                              P, dt, p, ocv_n, ocv_p, _Point())
            if trial.ok and _norm(trial) < (1.0 - 1e-4 * step) * res:
                I += step * dI
                l += step * dl
                pt = trial
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return None, I, l
    if _norm(pt) <= tol:
        return pt, I, l
    return None, I, l


def _solve_l(I, l, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol):
    """Scalar Newton on the side-reaction relation at fixed current."""
    for _ in range(100):
        pt = _evaluate(I, l, True, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, _Point())
        if not pt.ok:
            return None, l
        if abs(pt.r1) <= tol:
            return pt, l
        l -= pt.r1 / pt.a12
    return None, l


def _bisect_current(I, l, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol):
    """Bracketing fallback on the power relation when Newton stalls."""

    def at(current, lg):
        if active:
            return _solve_l(current, lg, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol)
        pt = _evaluate(current, lg, False, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, _Point())
        return (pt if pt.ok else None), lg

    sign = 1.0 if P > 0 else -1.0
    lo = 0.0
    pt_lo, l = at(lo, l)
    if pt_lo is None:
        return None, I, l
    if abs(pt_lo.r2) <= tol:
        return pt_lo, lo, l
    hi = sign * max(abs(I), 1.0)
    for _ in range(200):
        pt_hi, l_hi = at(hi, l)
        if pt_hi is None:
            return None, I, l
        if pt_hi.r2 * pt_lo.r2 <= 0.0:
            break
        lo, pt_lo, l = hi, pt_hi, l_hi
        hi *= 2.0
    else:
        return None, I, l
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pt_mid, l_mid = at(mid, l)
        if pt_mid is None:
            return None, I, l
        if abs(pt_mid.r2) <= tol or abs(hi - lo) <= 1e-15 * max(1.0, abs(mid)):
            return pt_mid, mid, l_mid
        if pt_mid.r2 * pt_lo.r2 <= 0.0:
            hi = mid
        else:
            lo, pt_lo, l = mid, pt_mid, l_mid
    return None, I, l


def solve_step(state, P, dt, p, ocv_n, ocv_p, guess, tol=1e-10, maxit=50):
    """Advance one backward-Euler step.

    Returns ``(status, point, I, jsd)`` where ``point`` is the converged
    internal :class:`_Point` (``None`` unless status is OK).
    """
    cn, cp, df, cf = state
    active = p[P_I0SD] > 0.0
    I0, jsd0 = guess
    if active:
        l0 = math.log(-jsd0) if jsd0 < 0.0 else math.log(p[P_I0SD])
    else:
        l0 = 0.0
    pt, I, l = _newton(I0, l0, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol, maxit)
    if pt is None:
        pt, I, l = _bisect_current(I0, l0, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol)
    if pt is None:
        # distinguish a surface concentration leaving its range from a stall
        probe = _evaluate(I0, l0, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, _Point())
        return (NONCONVERGENCE if probe.ok else DOMAIN), None, I0, jsd0
    if not (0.0 <= pt.cn1 <= p[P_CNMAX] and 0.0 <= pt.cp1 <= p[P_CPMAX]):
        return DOMAIN, None, I0, jsd0
    return OK, pt, I, pt.jsd


def make_ocv(breaks, coefs):
    return _Ocv(breaks, coefs)


def simulate_steps(state, power, dt, p, ocv_n, ocv_p, guess, tau_lo, tau_hi,
                   stop_on_violation, out, tol=1e-10, maxit=50):
    """Run the cell model over ``power`` (MW per step).

    Writes one row per completed step into ``out`` (shape ``(S, N_COLS)``).
    Returns ``(status, index, state, guess, first_violation_status,
    first_violation_index)``; ``index`` is the number of completed steps.
    """
    p = [float(v) for v in p]
    cn, cp, df, cf = (float(v) for v in state)
    I, jsd = float(guess[0]), float(guess[1])
    emax = p[P_EMAX]
    viol_status = OK
    viol_index = -1
    n = len(power)
    for s in range(n):
        status, pt, I, jsd = solve_step((cn, cp, df, cf), float(power[s]), dt, p,
                                        ocv_n, ocv_p, (I, jsd), tol, maxit)
        if status != OK:
            return status, s, (cn, cp, df, cf), (I, jsd), viol_status, viol_index
        row = out[s]
        row[COL_E] = pt.E
        row[COL_V] = pt.V
        row[COL_CR] = pt.Cr
        row[COL_CF] = pt.cf1
        row[COL_DF] = pt.df1
        row[COL_CN] = pt.cn1
        row[COL_CP] = pt.cp1
        row[COL_I] = I
        row[COL_JSD] = pt.jsd
        row[COL_PHIN] = pt.phin
        row[COL_PHIP] = pt.phip
        cap = (1.0 - cf) * emax
        if viol_status == OK:
            if pt.E > tau_hi * cap:
                viol_status, viol_index = OVERCHARGE, s
            elif pt.E < tau_lo * cap:
                viol_status, viol_index = OVERDISCHARGE, s
        cn, cp, df, cf = pt.cn1, pt.cp1, pt.df1, pt.cf1
        if viol_status != OK and stop_on_violation:
            return OK, s + 1, (cn, cp, df, cf), (I, jsd), viol_status, viol_index
    return OK, n, (cn, cp, df, cf), (I, jsd), viol_status, viol_index
