# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled cell step and hour-loop kernels.

Same algorithm, parameter layout and return conventions as
:mod:`battmpc._kernel_py`; see that module for documentation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, asinh, fabs, isfinite

cnp.import_array()

DEF P_F = 0
DEF P_R = 1
DEF P_T = 2
DEF P_CE = 3
DEF P_DN = 4
DEF P_RN = 5
DEF P_KN = 6
DEF P_CNMAX = 7
DEF P_SN = 8
DEF P_DP = 9
DEF P_RP = 10
DEF P_KP = 11
DEF P_CPMAX = 12
DEF P_SP = 13
DEF P_I0SD = 14
DEF P_UREF = 15
DEF P_MSD = 16
DEF P_RHOSD = 17
DEF P_KAPPA = 18
DEF P_RSEI = 19
DEF P_QMAX = 20
DEF P_EMAX = 21

DEF ST_OK = 0
DEF ST_OVERCHARGE = 1
DEF ST_OVERDISCHARGE = 2
DEF ST_NONCONVERGENCE = 3
DEF ST_DOMAIN = 4

DEF N_COLS = 11


cdef class Ocv:
    cdef double[::1] x
    cdef double[:, ::1] c
    cdef Py_ssize_t m

    def __init__(self, breaks, coefs):
        self.x = np.ascontiguousarray(breaks, dtype=np.float64)
        self.c = np.ascontiguousarray(coefs, dtype=np.float64)
        self.m = self.x.shape[0] - 1

    cdef inline void eval(self, double t, double* u, double* du) nogil:
        cdef Py_ssize_t lo = 0, hi = self.m, mid
        # largest i with x[i] <= t, clamped to [0, m-1]
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if self.x[mid] <= t:
                lo = mid
            else:
                hi = mid
        cdef Py_ssize_t i = lo
        if i >= self.m:
            i = self.m - 1
        cdef double dx = t - self.x[i]
        cdef double a = self.c[0, i], b = self.c[1, i], cc = self.c[2, i], d = self.c[3, i]
        u[0] = ((a * dx + b) * dx + cc) * dx + d
        du[0] = (3.0 * a * dx + 2.0 * b) * dx + cc

    def __call__(self, double t):
        cdef double u, du
        self.eval(t, &u, &du)
        return u, du


def make_ocv(breaks, coefs):
    return Ocv(breaks, coefs)


cdef struct Point:
    bint ok
    double r1, r2, a11, a12, a21, a22
    double cn1, cp1, df1, cf1, jsd, phin, phip, V, E, Cr


cdef inline void asinh_term(double J, double cs, double cmax, double kF_sqrtce,
                            double two_over_f, double* eta, double* deta_dJ,
                            double* deta_dcs) nogil:
    cdef double i0 = kF_sqrtce * sqrt((cmax - cs) * cs)
    cdef double z = J / (2.0 * i0)
    cdef double root = sqrt(1.0 + z * z)
    cdef double di0_dcs = i0 * (cmax - 2.0 * cs) / (2.0 * (cmax - cs) * cs)
    eta[0] = two_over_f * asinh(z)
    deta_dJ[0] = two_over_f / (root * 2.0 * i0)
    deta_dcs[0] = -two_over_f * z / root * di0_dcs / i0


cdef Point evaluate(double I, double l, bint active, double cn, double cp,
                    double df, double cf, double P, double dt, double* p,
                    Ocv ocv_n, Ocv ocv_p):
    cdef Point out
    cdef double F = p[P_F]
    cdef double f = F / (p[P_R] * p[P_T])
    cdef double two_over_f = 2.0 / f
    cdef double sqrt_ce = sqrt(p[P_CE])
    cdef double Rn = p[P_RN], Dn = p[P_DN], cnmax = p[P_CNMAX], Sn = p[P_SN]
    cdef double Rp = p[P_RP], Dp = p[P_DP], cpmax = p[P_CPMAX], Sp = p[P_SP]
    cdef double jsd, djsd_dl
    if active:
        jsd = -exp(l)
        djsd_dl = jsd
    else:
        jsd = 0.0
        djsd_dl = 0.0

    cdef double Jp = I / Sp
    cdef double cp1 = cp - 3.0 * Jp * dt / (Rp * F)
    cdef double acoef_p = -3.0 * dt / (Rp * F) - Rp / (5.0 * Dp * F)
    cdef double csp = cp1 - Jp * Rp / (5.0 * Dp * F)
    cdef double Jn = -I / Sn - jsd
    cdef double cn1 = cn - 3.0 * Jn * dt / (Rn * F)
    cdef double acoef_n = -3.0 * dt / (Rn * F) - Rn / (5.0 * Dn * F)
    cdef double csn = cn1 - Jn * Rn / (5.0 * Dn * F)
    out.ok = 0.0 < csn < cnmax and 0.0 < csp < cpmax
    if not out.ok:
        return out

    cdef double dfac = -p[P_MSD] * dt / (p[P_RHOSD] * F)
    cdef double df1 = df + jsd * dfac
    cdef double Rf = p[P_RSEI] + df1 / p[P_KAPPA]
    cdef double dRf_dl = djsd_dl * dfac / p[P_KAPPA]

    cdef double etap, dep_dJ, dep_dcs, etan, den_dJ, den_dcs
    asinh_term(Jp, csp, cpmax, p[P_KP] * F * sqrt_ce, two_over_f, &etap, &dep_dJ, &dep_dcs)
    asinh_term(Jn, csn, cnmax, p[P_KN] * F * sqrt_ce, two_over_f, &etan, &den_dJ, &den_dcs)
    cdef double Up, dUp, Un, dUn
    ocv_p.eval(csp / cpmax, &Up, &dUp)
    ocv_n.eval(csn / cnmax, &Un, &dUn)

    cdef double dJn_dI = -1.0 / Sn
    cdef double dJn_dl = -djsd_dl
    cdef double dcsn_dI = acoef_n * dJn_dI
    cdef double dcsn_dl = acoef_n * dJn_dl
    cdef double deta_n_dI = den_dJ * dJn_dI + den_dcs * dcsn_dI
    cdef double deta_n_dl = den_dJ * dJn_dl + den_dcs * dcsn_dl
    cdef double dUn_dI = dUn * dcsn_dI / cnmax
    cdef double dUn_dl = dUn * dcsn_dl / cnmax

    cdef double phip = Up + etap
    cdef double dphip_dI = dUp * acoef_p / (Sp * cpmax) + dep_dJ / Sp + dep_dcs * acoef_p / Sp
    cdef double phin = Un + etan - Rf * I / Sn
    cdef double dphin_dI = dUn_dI + deta_n_dI - Rf / Sn
    cdef double dphin_dl = dUn_dl + deta_n_dl - dRf_dl * I / Sn

    cdef double V = phip - phin
    out.r2 = I * V / 1e6 - P
    out.a21 = (V + I * (dphip_dI - dphin_dI)) / 1e6
    out.a22 = -I * dphin_dl / 1e6

    cdef double eta_sd
    if active:
        eta_sd = Un + etan - p[P_UREF]
        out.r1 = l - log(p[P_I0SD]) + f * eta_sd
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


cdef inline double pnorm(Point* pt):
    return fabs(pt.r1) if fabs(pt.r1) > fabs(pt.r2) else fabs(pt.r2)


cdef bint newton(double* I, double* l, bint active, double cn, double cp, double df,
                 double cf, double P, double dt, double* p, Ocv ocv_n, Ocv ocv_p,
                 double tol, int maxit, Point* res_pt):
    cdef Point pt = evaluate(I[0], l[0], active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p)
    cdef Point trial
    cdef double res, det, dI, dl, step
    cdef bint accepted
    cdef int it
    if not pt.ok:
        return False
    for it in range(maxit):
        res = pnorm(&pt)
        if res <= tol:
            res_pt[0] = pt
            return True
        if active:
            det = pt.a11 * pt.a22 - pt.a12 * pt.a21
            if det == 0.0 or not isfinite(det):
                return False
            dI = -(pt.a22 * pt.r1 - pt.a12 * pt.r2) / det
            dl = -(-pt.a21 * pt.r1 + pt.a11 * pt.r2) / det
        else:
            if pt.a21 == 0.0:
                return False
            dI = -pt.r2 / pt.a21
            dl = 0.0
        step = 1.0
        accepted = False
        while step > 1e-6:
            trial = evaluate(I[0] + step * dI, l[0] + step * dl, active, cn, cp, df, cf,
                             P, dt, p, ocv_n, ocv_p)
            if trial.ok and pnorm(&trial) < (1.0 - 1e-4 * step) * res:
                I[0] += step * dI
                l[0] += step * dl
                pt = trial
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return False
    if pnorm(&pt) <= tol:
        res_pt[0] = pt
        return True
    return False


cdef bint solve_l(double I, double* l, double cn, double cp, double df, double cf,
                  double P, double dt, double* p, Ocv ocv_n, Ocv ocv_p, double tol,
                  Point* out):
    cdef int it
    cdef Point pt
    for it in range(100):
        pt = evaluate(I, l[0], True, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p)
        if not pt.ok:
            return False
        if fabs(pt.r1) <= tol:
            out[0] = pt
            return True
        l[0] -= pt.r1 / pt.a12
    return False


cdef bint at_current(double I, double* l, bint active, double cn, double cp, double df,
                     double cf, double P, double dt, double* p, Ocv ocv_n, Ocv ocv_p,
                     double tol, Point* out):
    if active:
        return solve_l(I, l, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol, out)
    out[0] = evaluate(I, l[0], False, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p)
    return out.ok


cdef bint bisect_current(double* I, double* l, bint active, double cn, double cp,
                         double df, double cf, double P, double dt, double* p,
                         Ocv ocv_n, Ocv ocv_p, double tol, Point* res_pt):
    cdef double sign = 1.0 if P > 0 else -1.0
    cdef double lo = 0.0, hi, mid
    cdef double l_lo = l[0], l_hi, l_mid
    cdef Point pt_lo, pt_hi, pt_mid
    cdef int it
    cdef bint bracketed = False
    if not at_current(lo, &l_lo, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol, &pt_lo):
        return False
    if fabs(pt_lo.r2) <= tol:
        res_pt[0] = pt_lo
        I[0] = lo
        l[0] = l_lo
        return True
    hi = sign * (fabs(I[0]) if fabs(I[0]) > 1.0 else 1.0)
    for it in range(200):
        l_hi = l_lo
        if not at_current(hi, &l_hi, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol, &pt_hi):
            return False
        if pt_hi.r2 * pt_lo.r2 <= 0.0:
            bracketed = True
            break
        lo = hi
        pt_lo = pt_hi
        l_lo = l_hi
        hi *= 2.0
    if not bracketed:
        return False
    for it in range(200):
        mid = 0.5 * (lo + hi)
        l_mid = l_lo
        if not at_current(mid, &l_mid, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol, &pt_mid):
            return False
        if fabs(pt_mid.r2) <= tol or fabs(hi - lo) <= 1e-15 * (fabs(mid) if fabs(mid) > 1.0 else 1.0):
            res_pt[0] = pt_mid
            I[0] = mid
            l[0] = l_mid
            return True
        if pt_mid.r2 * pt_lo.r2 <= 0.0:
            hi = mid
        else:
            lo = mid
            pt_lo = pt_mid
            l_lo = l_mid
    return False


cdef int solve_one(double cn, double cp, double df, double cf, double P, double dt,
                   double* p, Ocv ocv_n, Ocv ocv_p, double* I, double* jsd,
                   double tol, int maxit, Point* pt):
    cdef bint active = p[P_I0SD] > 0.0
    cdef double I0 = I[0], jsd0 = jsd[0]
    cdef double l0
    if active:
        l0 = log(-jsd0) if jsd0 < 0.0 else log(p[P_I0SD])
    else:
        l0 = 0.0
    cdef double Iw = I0, lw = l0
    cdef Point probe
    if not newton(&Iw, &lw, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol, maxit, pt):
        Iw = I0
        lw = l0
        if not bisect_current(&Iw, &lw, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p, tol, pt):
            probe = evaluate(I0, l0, active, cn, cp, df, cf, P, dt, p, ocv_n, ocv_p)
            return ST_NONCONVERGENCE if probe.ok else ST_DOMAIN
    if not (0.0 <= pt.cn1 <= p[P_CNMAX] and 0.0 <= pt.cp1 <= p[P_CPMAX]):
        return ST_DOMAIN
    I[0] = Iw
    jsd[0] = pt.jsd
    return ST_OK


def solve_step(state, double P, double dt, p, Ocv ocv_n, Ocv ocv_p, guess,
               double tol=1e-10, int maxit=50):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double I = guess[0], jsd = guess[1]
    cdef Point pt
    cdef int status = solve_one(state[0], state[1], state[2], state[3], P, dt, <double*> &pv[0],
                                ocv_n, ocv_p, &I, &jsd, tol, maxit, &pt)
    if status != ST_OK:
        return status, None, guess[0], guess[1]
    return status, dict(cn1=pt.cn1, cp1=pt.cp1, df1=pt.df1, cf1=pt.cf1, jsd=pt.jsd,
                        phin=pt.phin, phip=pt.phip, V=pt.V, E=pt.E, Cr=pt.Cr), I, jsd


def simulate_steps(state, power, double dt, p, Ocv ocv_n, Ocv ocv_p, guess,
                   double tau_lo, double tau_hi, bint stop_on_violation,
                   double[:, ::1] out, double tol=1e-10, int maxit=50):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[::1] pw = np.ascontiguousarray(power, dtype=np.float64)
    cdef double* par = <double*> &pv[0]
    cdef double cn = state[0], cp = state[1], df = state[2], cf = state[3]
    cdef double I = guess[0], jsd = guess[1]
    cdef double emax = par[P_EMAX], cap
    cdef int viol_status = ST_OK, status
    cdef Py_ssize_t viol_index = -1, s, n = pw.shape[0]
    cdef Point pt
    if out.shape[0] < n or out.shape[1] < N_COLS:
        raise ValueError("output buffer too small")
    for s in range(n):
        status = solve_one(cn, cp, df, cf, pw[s], dt, par, ocv_n, ocv_p, &I, &jsd,
                           tol, maxit, &pt)
        if status != ST_OK:
            return status, s, (cn, cp, df, cf), (I, jsd), viol_status, viol_index
        out[s, 0] = pt.E
        out[s, 1] = pt.V
        out[s, 2] = pt.Cr
        out[s, 3] = pt.cf1
        out[s, 4] = pt.df1
        out[s, 5] = pt.cn1
        out[s, 6] = pt.cp1
        out[s, 7] = I
        out[s, 8] = pt.jsd
        out[s, 9] = pt.phin
        out[s, 10] = pt.phip
        cap = (1.0 - cf) * emax
        if viol_status == ST_OK:
            if pt.E > tau_hi * cap:
                viol_status = ST_OVERCHARGE
                viol_index = s
            elif pt.E < tau_lo * cap:
                viol_status = ST_OVERDISCHARGE
                viol_index = s
        cn = pt.cn1
        cp = pt.cp1
        df = pt.df1
        cf = pt.cf1
        if viol_status != ST_OK and stop_on_violation:
            return ST_OK, s + 1, (cn, cp, df, cf), (I, jsd), viol_status, viol_index
    return ST_OK, n, (cn, cp, df, cf), (I, jsd), viol_status, viol_index
