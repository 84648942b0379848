"""Primal-dual interior-point method for smooth NLPs and LPs.

The problem ``min f(x)  s.t.  cl <= c(x) <= cu,  xl <= x <= xu`` is put in
the form ``h(z) = 0, zl <= z <= zu`` with ``z = (x, s)``: equality rows are
``c_i(x) - cl_i`` and every ranged or one-sided row gets a slack ``s_i``
(``c_i(x) - s_i = 0``). Bounds are handled by a log barrier with explicit
bound multipliers ``vl, vu``.

Each iteration solves the regularized primal-dual system::

    [ W + Sigma + dw I   Jh^T  ] [dz]     [ grad f + Jh^T y - rl + ru ]
    [ Jh                 -dc I ] [dy] = - [ h                         ]

with a sparse LU (SuperLU). For NLPs the regularization ``dw`` is chosen by
an inertia-free curvature test on the computed direction and globalized by
a filter line search with one second-order correction. For LPs the same
system is used in Mehrotra predictor-corrector form with separate primal and
dual step lengths.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from battmpc.solvers.problems import NlpProblem

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
ITERATION_LIMIT = "IterationLimit"
NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class IpmOptions:
    tol: float = 1e-6
    max_iter: int = 3000
    mu_init: float = 0.1
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    kappa_eps: float = 10.0
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    tau_min: float = 0.99
    s_max: float = 100.0
    curvature_kappa: float = 1e-8
    dw_init: float = 1e-4
    dw_max: float = 1e40
    dw_min: float = 1e-20
    dc_base: float = 1e-8
    lp_reg: float = 1e-11
    lp_tau: float = 0.995
    max_soc: int = 1
    verbose: bool = False


@dataclass
class Warm:
    """Primal (and optionally dual) starting point."""

    x: np.ndarray
    y: np.ndarray | None = None
    vl: np.ndarray | None = None  # multipliers of x lower bounds
    vu: np.ndarray | None = None
    mu: float | None = None


@dataclass
class IpmResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    vl: np.ndarray
    vu: np.ndarray
    objective: float
    primal_infeasibility: float
    dual_infeasibility: float
    complementarity: float
    kkt_error: float
    duality_gap: float
    iterations: int
    wall_time: float
    message: str = ""
    history: list = field(default_factory=list, repr=False)


class _Layout:
    """Index bookkeeping for z = (x, s) and the residual h."""

    def __init__(self, prob: NlpProblem):
        n, m = prob.n, prob.m
        cl = np.asarray(prob.c_lower, dtype=float)
        cu = np.asarray(prob.c_upper, dtype=float)
        xl = np.asarray(prob.x_lower, dtype=float).copy()
        xu = np.asarray(prob.x_upper, dtype=float).copy()
        if cl.shape != (m,) or cu.shape != (m,) or xl.shape != (n,) or xu.shape != (n,):
            raise ValueError("bound arrays do not match the problem dimensions")
        self.n, self.m = n, m
        self.eq = cl == cu
        self.ineq = np.flatnonzero(~self.eq)
        self.k = len(self.ineq)
        self.N = n + self.k
        # fixed variables are relaxed by a hair so the barrier stays defined
        fixed = xl == xu
        if np.any(fixed):
            pad = 1e-8 * np.maximum(1.0, np.abs(xl[fixed]))
            xl[fixed] -= pad
            xu[fixed] += pad
        self.zl = np.concatenate((xl, cl[self.ineq]))
        self.zu = np.concatenate((xu, cu[self.ineq]))
        self.hl = np.isfinite(self.zl)
        self.hu = np.isfinite(self.zu)
        self.rhs_const = np.where(self.eq, cl, 0.0)
        self.E = sp.csr_matrix(
            (-np.ones(self.k), (self.ineq, np.arange(self.k))), shape=(m, self.k)
        )

    def h(self, cx, s):
        r = cx - self.rhs_const
        r[self.ineq] -= s
        return r

    def jac(self, Jx):
        return sp.hstack((Jx, self.E), format="csr")


def _push(v, lo, hi, push, frac):
    """Move ``v`` strictly inside ``[lo, hi]``."""
    v = v.copy()
    both = np.isfinite(lo) & np.isfinite(hi)
    pl = np.where(np.isfinite(lo), push * np.maximum(1.0, np.abs(lo)), 0.0)
    pu = np.where(np.isfinite(hi), push * np.maximum(1.0, np.abs(hi)), 0.0)
    width = np.where(both, hi - lo, np.inf)
    pl = np.where(both, np.minimum(pl, frac * width), pl)
    pu = np.where(both, np.minimum(pu, frac * width), pu)
    lo_in = np.where(np.isfinite(lo), lo + pl, -np.inf)
    hi_in = np.where(np.isfinite(hi), hi - pu, np.inf)
    v = np.maximum(v, lo_in)
    v = np.minimum(v, hi_in)
    return v


def _frac_to_boundary(v, dv, tau):
    """Largest alpha in (0, 1] with v + alpha dv >= (1 - tau) v for v > 0."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


class _Kkt:
    """Factorizes and solves the primal-dual system for one iterate."""

    def __init__(self, W, sigma, Jh, dw, dc):
        N = sigma.size
        m = Jh.shape[0]
        top = W + sp.diags(sigma + dw, format="csr") if W is not None else sp.diags(sigma + dw, format="csr")
        bottom = sp.diags(np.full(m, -dc), format="csr")
        K = sp.bmat([[top, Jh.T], [Jh, bottom]], format="csc")
        self.N = N
        self.top = top
        with warnings.catch_warnings():
            warnings.simplefilter("error", sp.SparseEfficiencyWarning)
            self.lu = spla.splu(K, permc_spec="MMD_ATA", diag_pivot_thresh=0.1,
                                options={"SymmetricMode": True})
        self.K = K

    def solve(self, r1, r2, refine=1):
        rhs = np.concatenate((r1, r2))
        sol = self.lu.solve(rhs)
        for _ in range(refine):
            res = rhs - self.K @ sol
            sol += self.lu.solve(res)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite KKT solution")
        return sol[: self.N], sol[self.N:]


def _factor(W, sigma, Jh, dw, dc):
    try:
        kkt = _Kkt(W, sigma, Jh, dw, dc)
    except RuntimeError:
        return None
    return kkt


class _Iterate:
    __slots__ = ("z", "y", "vl", "vu")

    def __init__(self, z, y, vl, vu):
        self.z, self.y, self.vl, self.vu = z, y, vl, vu


class _Evaluator:
    """Caches function values at the current iterate."""

    def __init__(self, prob: NlpProblem, lay: _Layout):
        self.prob = prob
        self.lay = lay
        self.evals = 0

    def point(self, z):
        lay = self.lay
        x = z[: lay.n]
        s = z[lay.n:]
        cx = np.asarray(self.prob.constraints(x), dtype=float)
        h = lay.h(cx, s)
        f = float(self.prob.objective(x))
        self.evals += 1
        return f, h

    def derivs(self, z):
        lay = self.lay
        x = z[: lay.n]
        g = np.zeros(lay.N)
        g[: lay.n] = self.prob.gradient(x)
        Jh = lay.jac(sp.csr_matrix(self.prob.jacobian(x)))
        return g, Jh

    def hess(self, z, y):
        lay = self.lay
        x = z[: lay.n]
        H = sp.csr_matrix(self.prob.hessian(x, y, 1.0))
        if lay.k:
            H = sp.block_diag((H, sp.csr_matrix((lay.k, lay.k))), format="csr")
        return H


def _slack_dist(it, lay):
    dl = np.where(lay.hl, it.z - lay.zl, 1.0)
    du = np.where(lay.hu, lay.zu - it.z, 1.0)
    # guard against round-off putting an iterate on its bound
    return np.maximum(dl, 1e-200), np.maximum(du, 1e-200)


def _errors(g, Jh, h, it, lay, mu, s_max):
    """Scaled optimality error of the barrier problem for ``mu``."""
    rd = g + Jh.T @ it.y - it.vl + it.vu
    dl, du = _slack_dist(it, lay)
    cl = np.where(lay.hl, dl * it.vl - mu, 0.0)
    cu = np.where(lay.hu, du * it.vu - mu, 0.0)
    nb = int(lay.hl.sum() + lay.hu.sum())
    m = h.size
    vsum = np.abs(it.vl[lay.hl]).sum() + np.abs(it.vu[lay.hu]).sum()
    sd = max(s_max, (np.abs(it.y).sum() + vsum) / max(1, m + nb)) / s_max
    sc = max(s_max, vsum / max(1, nb)) / s_max
    dual = float(np.max(np.abs(rd))) if rd.size else 0.0
    primal = float(np.max(np.abs(h))) if h.size else 0.0
    comp = float(max(np.max(np.abs(cl), initial=0.0), np.max(np.abs(cu), initial=0.0)))
    return max(dual / sd, primal, comp / sc), primal, dual, comp, dual / sd, comp / sc


def _initial(prob, lay, ev, opts, warm):
    x0 = np.asarray(warm.x if warm is not None else prob.x0, dtype=float)
    push = opts.bound_push if warm is None or warm.mu is None else min(opts.bound_push, 1e-8)
    frac = opts.bound_frac if warm is None or warm.mu is None else min(opts.bound_frac, 1e-8)
    x = _push(x0, lay.zl[: lay.n], lay.zu[: lay.n], push, frac)
    cx = np.asarray(prob.constraints(x), dtype=float)
    s = _push(cx[lay.ineq], lay.zl[lay.n:], lay.zu[lay.n:], push, frac)
    z = np.concatenate((x, s))
    vl = np.where(lay.hl, 1.0, 0.0)
    vu = np.where(lay.hu, 1.0, 0.0)
    y = np.zeros(lay.m)
    if warm is not None and warm.y is not None:
        y = np.asarray(warm.y, dtype=float).copy()
        if warm.vl is not None:
            vl[: lay.n] = np.where(lay.hl[: lay.n], np.maximum(warm.vl, 1e-12), 0.0)
        if warm.vu is not None:
            vu[: lay.n] = np.where(lay.hu[: lay.n], np.maximum(warm.vu, 1e-12), 0.0)
        # slack multipliers follow from stationarity in s: -y_i - vl + vu = 0
        ys = -y[lay.ineq]
        vl[lay.n:] = np.where(lay.hl[lay.n:], np.maximum(ys, 1e-12), 0.0)
        vu[lay.n:] = np.where(lay.hu[lay.n:], np.maximum(-ys, 1e-12), 0.0)
    else:
        # least-squares multiplier estimate, discarded if large
        g, Jh = ev.derivs(z)
        try:
            kkt = _Kkt(None, np.zeros(lay.N), Jh, 1.0, 0.0)
            _, yy = kkt.solve(-(g - vl + vu), np.zeros(lay.m), refine=0)
            if np.max(np.abs(yy), initial=0.0) <= 1e3:
                y = yy
        except (RuntimeError, np.linalg.LinAlgError):
            pass
    return _Iterate(z, y, vl, vu)


def _directions_bounds(it, lay, dz, rl, ru):
    dl, du = _slack_dist(it, lay)
    sl = np.where(lay.hl, it.vl / dl, 0.0)
    su = np.where(lay.hu, it.vu / du, 0.0)
    dvl = np.where(lay.hl, rl - it.vl - sl * dz, 0.0)
    dvu = np.where(lay.hu, ru - it.vu + su * dz, 0.0)
    return dvl, dvu


def _max_steps(it, lay, dz, dvl, dvu, tau):
    dl, du = _slack_dist(it, lay)
    ap = min(
        _frac_to_boundary(dl[lay.hl], dz[lay.hl], tau),
        _frac_to_boundary(du[lay.hu], -dz[lay.hu], tau),
    )
    ad = min(
        _frac_to_boundary(it.vl[lay.hl], dvl[lay.hl], tau),
        _frac_to_boundary(it.vu[lay.hu], dvu[lay.hu], tau),
    )
    return ap, ad


def _barrier(f, it_z, lay, mu):
    dl = it_z[lay.hl] - lay.zl[lay.hl]
    du = lay.zu[lay.hu] - it_z[lay.hu]
    if np.any(dl <= 0) or np.any(du <= 0):
        return math.inf
    return f - mu * (np.log(dl).sum() + np.log(du).sum())


def _barrier_grad(g, it, lay, mu):
    dl, du = _slack_dist(it, lay)
    return g - np.where(lay.hl, mu / dl, 0.0) + np.where(lay.hu, mu / du, 0.0)


def _reset_bound_duals(it, lay, mu, kappa_sigma=1e10):
    dl, du = _slack_dist(it, lay)
    it.vl = np.where(lay.hl, np.clip(it.vl, mu / (kappa_sigma * dl), kappa_sigma * mu / dl), 0.0)
    it.vu = np.where(lay.hu, np.clip(it.vu, mu / (kappa_sigma * du), kappa_sigma * mu / du), 0.0)


def _finish(status, prob, lay, ev, it, iters, t0, msg, hist, mu=0.0):
    g, Jh = ev.derivs(it.z)
    f, h = ev.point(it.z)
    err, primal, dual, comp, dual_s, comp_s = _errors(g, Jh, h, it, lay, 0.0, IpmOptions.s_max)
    dl, du = _slack_dist(it, lay)
    gap = float(np.sum(np.where(lay.hl, dl * it.vl, 0.0)) + np.sum(np.where(lay.hu, du * it.vu, 0.0)))
    n = lay.n
    return IpmResult(
        status=status, x=it.z[:n].copy(), y=it.y.copy(),
        vl=it.vl[:n].copy(), vu=it.vu[:n].copy(),
        objective=f * prob.objective_scale,
        primal_infeasibility=primal, dual_infeasibility=dual_s, complementarity=comp_s,
        kkt_error=err, duality_gap=gap, iterations=iters, wall_time=time.perf_counter() - t0,
        message=msg, history=hist,
    )


def solve_nlp_ipm(prob: NlpProblem, opts: IpmOptions | None = None,
                  warm: Warm | None = None) -> IpmResult:
    """Filter line-search interior-point method (monotone barrier update)."""
    opts = opts or IpmOptions()
    t0 = time.perf_counter()
    lay = _Layout(prob)
    if np.any(lay.zl > lay.zu):
        it = _Iterate(np.clip(np.nan_to_num(prob.x0), -1e300, 1e300), np.zeros(lay.m),
                      np.zeros(lay.N), np.zeros(lay.N))
        return IpmResult(INFEASIBLE, prob.x0.copy(), np.zeros(lay.m), np.zeros(lay.n), np.zeros(lay.n),
                         math.nan, math.inf, math.inf, math.inf, math.inf, math.inf, 0,
                         time.perf_counter() - t0, "inconsistent bounds")
    ev = _Evaluator(prob, lay)
    it = _initial(prob, lay, ev, opts, warm)
    mu = opts.mu_init if warm is None or warm.mu is None else max(warm.mu, opts.tol / 10)
    f, h = ev.point(it.z)
    theta0 = float(np.abs(h).sum())
    theta_max = 1e4 * max(1.0, theta0)
    theta_min = 1e-4 * max(1.0, theta0)
    filt: list[tuple[float, float]] = []
    dw_last = 0.0
    hist = []
    gamma_theta, gamma_phi, eta_phi = 1e-5, 1e-8, 1e-8
    s_theta, s_phi, delta = 1.1, 2.3, 1.0
    g, Jh = ev.derivs(it.z)
    for k in range(opts.max_iter + 1):
        err0 = _errors(g, Jh, h, it, lay, 0.0, opts.s_max)
        if err0[0] <= opts.tol:
            return _finish(OPTIMAL, prob, lay, ev, it, k, t0, "converged", hist)
        if k == opts.max_iter:
            break
        # barrier update
        while True:
            errmu = _errors(g, Jh, h, it, lay, mu, opts.s_max)[0]
            if errmu > opts.kappa_eps * mu or mu <= opts.tol / 10 * (1 + 1e-12):
                break
            mu = max(opts.tol / 10, min(opts.kappa_mu * mu, mu ** opts.theta_mu))
            filt = []
        tau = max(opts.tau_min, 1.0 - mu)
        H = ev.hess(it.z, it.y)
        dl, du = _slack_dist(it, lay)
        sigma = np.where(lay.hl, it.vl / dl, 0.0) + np.where(lay.hu, it.vu / du, 0.0)
        rl = np.where(lay.hl, mu / dl, 0.0)
        ru = np.where(lay.hu, mu / du, 0.0)
        r1 = -(g + Jh.T @ it.y - rl + ru)
        r2 = -h
        # regularize until the curvature test passes
        dw = 0.0
        dc = 0.0
        direction = None
        for _ in range(60):
            kkt = _factor(H, sigma, Jh, dw, dc)
            dz = None
            if kkt is None:
                dc = opts.dc_base * mu ** 0.25
            else:
                try:
                    dz, dy = kkt.solve(r1, r2)
                except np.linalg.LinAlgError:
                    dc = opts.dc_base * mu ** 0.25
            if dz is not None:
                nrm = float(dz @ dz)
                curv = float(dz @ (H @ dz) + dz @ (sigma * dz)) + dw * nrm
                if curv >= opts.curvature_kappa * nrm or nrm == 0.0:
                    direction = (dz, dy)
                    break
            if dw == 0.0:
                dw = opts.dw_init if dw_last == 0 else max(opts.dw_min, dw_last / 3)
            else:
                dw *= 100 if dw_last == 0 else 8
            if dw > opts.dw_max:
                break
        if direction is None:
            return _finish(NUMERICAL_FAILURE, prob, lay, ev, it, k, t0,
                           "KKT system singular after regularization", hist)
        if dw > 0:
            dw_last = dw
        dz, dy = direction
        dvl, dvu = _directions_bounds(it, lay, dz, rl, ru)
        ap_max, ad = _max_steps(it, lay, dz, dvl, dvu, tau)
        # filter line search on (theta, phi)
        theta = float(np.abs(h).sum())
        phi = _barrier(f, it.z, lay, mu)
        gphi = _barrier_grad(g, it, lay, mu)
        D = float(gphi @ dz)
        alpha = ap_max
        accepted = False
        tiny = np.max(np.abs(dz) / (1.0 + np.abs(it.z)), initial=0.0) < 10 * np.finfo(float).eps
        if tiny:
            accepted = True
            z_new = it.z + alpha * dz
            f_new, h_new = ev.point(z_new)
            f_type = True
        if D < 0:
            amin = 0.05 * min(gamma_theta, -gamma_phi * theta / D,
                              delta * theta ** s_theta / (-D) ** s_phi)
        else:
            amin = 0.05 * gamma_theta
        amin = max(amin, 1e-14)
        first = True
        while not accepted and alpha >= amin:
            z_new = it.z + alpha * dz
            f_new, h_new = ev.point(z_new)
            cands = [(z_new, f_new, h_new)]
            if first and opts.max_soc > 0:
                theta_new = float(np.abs(h_new).sum())
                if theta_new >= theta and theta > 0:
                    # second-order correction for the trial at the full step
                    h_soc = alpha * h + h_new
                    try:
                        dz_soc, _ = kkt.solve(r1, -h_soc)
                        a_soc = min(
                            _frac_to_boundary(dl[lay.hl], dz_soc[lay.hl], tau),
                            _frac_to_boundary(du[lay.hu], -dz_soc[lay.hu], tau),
                        )
                        zs = it.z + a_soc * dz_soc
                        fs, hs = ev.point(zs)
                        cands.insert(0, (zs, fs, hs))
                    except np.linalg.LinAlgError:
                        pass
            first = False
            for zc, fc, hc in cands:
                th_c = float(np.abs(hc).sum())
                ph_c = _barrier(fc, zc, lay, mu)
                if not math.isfinite(ph_c) or th_c > theta_max:
                    continue
                if any(th_c >= tf and ph_c >= pf for tf, pf in filt):
                    continue
                switching = D < 0 and alpha * (-D) ** s_phi > delta * theta ** s_theta
                if theta <= theta_min and switching:
                    if ph_c <= phi + eta_phi * alpha * D:
                        z_new, f_new, h_new = zc, fc, hc
                        accepted, f_type = True, True
                        break
                    continue
                if th_c <= (1 - gamma_theta) * theta or ph_c <= phi - gamma_phi * theta:
                    z_new, f_new, h_new = zc, fc, hc
                    accepted = True
                    f_type = switching and ph_c <= phi + eta_phi * alpha * D
                    break
            if not accepted:
                alpha *= 0.5
        if not accepted:
            # no restoration phase: take a short step that reduces infeasibility if one exists
            return _finish(NUMERICAL_FAILURE, prob, lay, ev, it, k, t0, "line search failed", hist)
        if not f_type:
            filt.append(((1 - gamma_theta) * theta, phi - gamma_phi * theta))
        step = (z_new - it.z)
        a_used = alpha if alpha > 0 else 1.0
        it.z = z_new
        it.y = it.y + a_used * dy
        it.vl = it.vl + ad * dvl
        it.vu = it.vu + ad * dvu
        _reset_bound_duals(it, lay, mu)
        f, h = f_new, h_new
        g, Jh = ev.derivs(it.z)
        if opts.verbose:
            print(f"{k:4d} f={f: .6e} th={np.abs(h).sum():.2e} err={err0[0]:.2e} "
                  f"mu={mu:.1e} dw={dw:.1e} a={alpha:.2e} |dz|={np.abs(step).max():.2e}")
        hist.append((k, f, float(np.abs(h).sum()), err0[0], mu, alpha))
    return _finish(ITERATION_LIMIT, prob, lay, ev, it, opts.max_iter, t0, "iteration limit", hist)


def solve_lp_ipm(prob: NlpProblem, opts: IpmOptions | None = None,
                 warm: Warm | None = None) -> IpmResult:
    """Mehrotra predictor-corrector on the same primal-dual system (W = 0)."""
    opts = opts or IpmOptions(tol=1e-8, max_iter=200)
    t0 = time.perf_counter()
    lay = _Layout(prob)
    if np.any(lay.zl > lay.zu):
        return IpmResult(INFEASIBLE, np.asarray(prob.x0, float).copy(), np.zeros(lay.m),
                         np.zeros(lay.n), np.zeros(lay.n), math.nan, math.inf, math.inf,
                         math.inf, math.inf, math.inf, 0, time.perf_counter() - t0,
                         "inconsistent bounds")
    ev = _Evaluator(prob, lay)
    it = _initial(prob, lay, ev, opts, warm)
    g, Jh = ev.derivs(it.z)
    nb = int(lay.hl.sum() + lay.hu.sum())
    hist = []
    reg = opts.lp_reg
    for k in range(opts.max_iter + 1):
        f, h = ev.point(it.z)
        err = _errors(g, Jh, h, it, lay, 0.0, opts.s_max)
        dl, du = _slack_dist(it, lay)
        comp_l = np.where(lay.hl, dl * it.vl, 0.0)
        comp_u = np.where(lay.hu, du * it.vu, 0.0)
        gap = float(comp_l.sum() + comp_u.sum())
        obj = f
        if err[1] <= opts.tol and err[4] <= opts.tol and gap <= opts.tol * (1 + abs(obj)) and err[0] <= opts.tol:
            return _finish(OPTIMAL, prob, lay, ev, it, k, t0, "converged", hist)
        if k == opts.max_iter:
            break
        if not np.all(np.isfinite(it.z)) or np.max(np.abs(it.z), initial=0.0) > 1e15:
            break
        mu = gap / max(1, nb)
        big = max(np.max(np.abs(it.vl), initial=0.0), np.max(np.abs(it.vu), initial=0.0),
                  np.max(np.abs(it.y), initial=0.0))
        if big > 1e30 or (mu < 1e-30 and err[0] > opts.tol):
            break  # diverging duals or collapsed barrier: likely infeasible
        sigma = np.where(lay.hl, it.vl / dl, 0.0) + np.where(lay.hu, it.vu / du, 0.0)
        kkt = None
        for _ in range(8):
            kkt = _factor(None, sigma, Jh, reg, reg)
            if kkt is not None:
                break
            reg *= 100
        if kkt is None:
            return _finish(NUMERICAL_FAILURE, prob, lay, ev, it, k, t0, "singular KKT system", hist)
        rd = g + Jh.T @ it.y
        try:
            # predictor
            rl = np.zeros(lay.N)
            ru = np.zeros(lay.N)
            dz_a, dy_a = kkt.solve(-(rd - rl + ru), -h)
            dvl_a, dvu_a = _directions_bounds(it, lay, dz_a, rl, ru)
            ap, ad = _max_steps(it, lay, dz_a, dvl_a, dvu_a, 1.0)
            ml = np.where(lay.hl, (dl + ap * dz_a) * (it.vl + ad * dvl_a), 0.0)
            mu_ = np.where(lay.hu, (du - ap * dz_a) * (it.vu + ad * dvu_a), 0.0)
            mu_aff = float(ml.sum() + mu_.sum()) / max(1, nb)
            sig = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            sig = min(1.0, sig)
            # corrector
            rl = np.where(lay.hl, (sig * mu - dz_a * dvl_a) / dl, 0.0)
            ru = np.where(lay.hu, (sig * mu + dz_a * dvu_a) / du, 0.0)
            dz, dy = kkt.solve(-(rd - rl + ru), -h)
        except np.linalg.LinAlgError:
            return _finish(NUMERICAL_FAILURE, prob, lay, ev, it, k, t0, "KKT solve failed", hist)
        dvl, dvu = _directions_bounds(it, lay, dz, rl, ru)
        tau = min(max(opts.lp_tau, 1.0 - mu), 1.0 - 1e-10)
        ap, ad = _max_steps(it, lay, dz, dvl, dvu, tau)
        it.z = it.z + ap * dz
        it.y = it.y + ad * dy
        it.vl = np.where(lay.hl, it.vl + ad * dvl, 0.0)
        it.vu = np.where(lay.hu, it.vu + ad * dvu, 0.0)
        hist.append((k, f, err[1], err[0], mu, ap, ad))
        if opts.verbose:
            print(f"{k:3d} f={f: .8e} pr={err[1]:.1e} du={err[4]:.1e} gap={gap:.1e} ap={ap:.2f} ad={ad:.2f}")
    return _finish(ITERATION_LIMIT, prob, lay, ev, it, k, t0, "iteration limit or divergence", hist)
