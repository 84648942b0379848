"""Brute-force reference solutions shared by the OCP, strategy and acceptance tests."""

import numpy as np

from battmpc.plant import HourlyCommitment, SimConfig, simulate_hour

TOL = 1e-9


def _range_max(values):
    """Sparse table for O(1) range-max queries over ``values``."""
    table = [values]
    k = 1
    while 2 * k <= len(values):
        prev = table[-1]
        table.append(np.maximum(prev[:-k], prev[k:]))
        k *= 2

    def query(lo, hi):  # inclusive lo, exclusive hi; -inf for empty ranges
        out = np.full(lo.shape, -np.inf)
        ok = hi > lo
        span = np.where(ok, hi - lo, 1)
        level = np.floor(np.log2(span)).astype(int)
        for j in np.unique(level[ok]):
            sel = ok & (level == j)
            t = table[j]
            out[sel] = np.maximum(t[lo[sel]], t[hi[sel] - (1 << j)])
        return out

    return query


def _hour_candidates(alpha_k, fr, en, cfg, step):
    F = np.round(np.arange(0.0, cfg.p_max + step / 2, step), 10)
    net = np.round(np.arange(-cfg.p_min, cfg.p_max + step / 2, step), 10)
    FF, NN = np.meshgrid(F, net, indexing="ij")
    FF, NN = FF.ravel(), NN.ravel()
    S = len(alpha_k)
    P = alpha_k[None, :] * FF[:, None] + NN[:, None]
    ok = np.all((P >= -cfg.p_min - TOL) & (P <= cfg.p_max + TOL), axis=1)
    # energy offsets after each step relative to the hour's start
    d = np.cumsum(P, axis=1) / S
    value = fr * FF - en * np.maximum(NN, 0.0)
    return FF[ok], NN[ok], d[ok], value[ok]


def rounding_slack(alpha, step=0.1):
    """Largest energy drift (MWh) from moving every F and net purchase by half a step."""
    alpha = np.asarray(alpha, float)
    return 0.5 * step * float(np.sum(np.abs(alpha) + 1.0)) / alpha.shape[1]


def lf_enumeration(alpha, fr_price, energy_price, E0, cfg, cap=1.0, step=0.1, slack=0.0):
    """Best LF profit over (F, O, L) on a ``step`` MW grid for N <= 2 hours.

    O and L enter the LP only through the net purchase ``O - L`` and only O
    is priced, so each hour is enumerated over (F, net) with
    ``O = max(net, 0)`` and ``L = max(-net, 0)``. ``slack`` widens the
    energy bounds and the terminal band by that many MWh.
    Returns ``(best_profit, argmax)``.
    """
    w = TOL + slack
    lo_e, hi_e = cfg.tau_l * cap - w, cfg.tau_u * cap + w
    lo_t, hi_t = cfg.eta_l * cap - w, cfg.eta_u * cap + w
    N = len(alpha)
    if N == 1:
        F, n, d, v = _hour_candidates(alpha[0], fr_price[0], energy_price[0], cfg, step)
        E = E0 + d
        ok = np.all((E >= lo_e) & (E <= hi_e), axis=1) & (E[:, -1] >= lo_t) & (E[:, -1] <= hi_t)
        if not ok.any():
            return -np.inf, None
        i = np.flatnonzero(ok)[np.argmax(v[ok])]
        return float(v[i]), [(F[i], n[i])]
    if N != 2:
        raise ValueError("enumeration supports one or two hours")
    F1, n1, d1, v1 = _hour_candidates(alpha[0], fr_price[0], energy_price[0], cfg, step)
    E1 = E0 + d1
    ok1 = np.all((E1 >= lo_e) & (E1 <= hi_e), axis=1)
    F1, n1, v1, E1_end = F1[ok1], n1[ok1], v1[ok1], E1[ok1, -1]
    order = np.argsort(E1_end, kind="stable")
    E_sorted, v_sorted = E1_end[order], v1[order]
    query = _range_max(v_sorted)
    F2, n2, d2, v2 = _hour_candidates(alpha[1], fr_price[1], energy_price[1], cfg, step)
    lo = np.maximum(lo_e - d2.min(axis=1), lo_t - d2[:, -1])
    hi = np.minimum(hi_e - d2.max(axis=1), hi_t - d2[:, -1])
    a = np.searchsorted(E_sorted, lo, side="left")
    b = np.searchsorted(E_sorted, hi, side="right")
    best1 = query(a, b)
    total = best1 + v2
    j = int(np.argmax(total))
    if not np.isfinite(total[j]):
        return -np.inf, None
    # recover the first-hour partner
    sel = np.arange(a[j], b[j])
    i = order[sel[np.argmax(v_sorted[sel])]]
    return float(total[j]), [(F1[i], n1[i]), (F2[j], n2[j])]


def _commit(F, net):
    return HourlyCommitment(F, max(net, 0.0), max(-net, 0.0))


def hf_grid(alpha, fr, en, x0, p, cfg, step=0.1):
    """Best one-hour HF objective over an F grid, net purchase solved exactly.

    For every F the net purchase meeting the terminal energy target is found
    by bisection on plant simulations at the transcription resolution, which
    is what the NLP discretizes. Returns ``(best, grid_error, argmax_F)``;
    ``grid_error`` is the objective change from the argmax to its feasible
    neighbours on the grid.
    """
    S = len(alpha)
    sim = SimConfig(steps=S, tau_l=cfg.tau_l, tau_u=cfg.tau_u, p_max=cfg.p_max)
    loose = SimConfig(steps=S, tau_l=0.0, tau_u=1.0, p_max=cfg.p_max)
    target = 0.5 * (cfg.eta_l + cfg.eta_u)

    def end_gap(F, net):
        tr = simulate_hour(x0, _commit(F, net), alpha, loose, p)
        if tr.verdict.violation.value == "solver_failure":
            return (1.0 if net > 0 else -1.0), None
        cap = (1.0 - tr.end.fade) * p.energy
        return tr.end.energy(p) - target * cap, tr

    values = []
    for F in np.round(np.arange(0.0, cfg.p_max + step / 2, step), 10):
        lo, hi = -cfg.p_min, cfg.p_max
        glo, _ = end_gap(F, lo)
        ghi, _ = end_gap(F, hi)
        if glo > 0 or ghi < 0:
            values.append(-np.inf)
            continue
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            g, _ = end_gap(F, mid)
            if g > 0:
                hi = mid
            else:
                lo = mid
        net = 0.5 * (lo + hi)
        P = alpha * F + net
        tr = simulate_hour(x0, _commit(F, net), alpha, sim, p)
        if not tr.feasible or np.any(P < -cfg.p_min) or np.any(P > cfg.p_max):
            values.append(-np.inf)
            continue
        fade = tr.end.fade - x0.fade
        values.append(fr * F - en * max(net, 0.0) - cfg.fade_penalty * fade)
    values = np.array(values)
    k = int(np.argmax(values))
    # objective change to the neighbouring grid points of the argmax
    near = [values[j] for j in (k - 1, k + 1) if 0 <= j < len(values) and np.isfinite(values[j])]
    err = max((abs(values[k] - v) for v in near), default=0.0)
    return float(values[k]), float(err), k * step
