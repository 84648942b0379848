"""Direct transcription of the market-participation optimal control problems.

Three builders share one configuration:

* :func:`build_hf_nlp` transcribes the reduced cell model with backward Euler
  at ``S_ocp`` steps per hour (nonlinear program).
* :func:`build_lf_lp` keeps only the energy balance (linear program).
* :func:`build_lf_fade_lp` adds the per-MW fade surrogate to the LP.

All problems are minimisations of negative profit. Variables are scaled to
be O(1): stoichiometries instead of concentrations, current densities in
units of the 1C current, film thickness and fade as increments from the
initial state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from battmpc import kernel
from battmpc.cell import CellState
from battmpc.params import CellParameters
from battmpc.solvers.problems import LpProblem, NlpProblem

# small cost per MW on every commitment so that ties (e.g. a band with no
# revenue) resolve to the smallest commitment instead of the analytic centre
TIE_BREAK = 1e-6

PERCENT = 100.0


class OcpConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OcpConfig:
    """Horizon, bounds and economic weights for the transcriptions.

    ``fade_penalty`` is in $ per unit fade (fraction) and ``fade_per_band``
    in fade fraction per MW of hourly band; use :meth:`from_percent_units`
    to pass the conventional $/% and %/MW values.
    """

    N: int = 1
    S_ocp: int = 1800
    p_max: float = 10.0  # charging limit, MW
    p_min: float = 10.0  # discharging limit (magnitude), MW
    v_min: float = -math.inf
    v_max: float = math.inf
    tau_l: float = 0.1
    tau_u: float = 0.9
    eta_l: float = 0.5
    eta_u: float = 0.5
    fade_penalty: float = 1.2e6
    fade_per_band: float = 2.4e-5
    flexible_load: bool = False
    tie_break: float = TIE_BREAK

    def __post_init__(self):
        if self.N < 1 or self.S_ocp < 1:
            raise OcpConfigError("horizon and steps per hour must be positive")
        if not 0.0 <= self.tau_l < self.tau_u <= 1.0:
            raise OcpConfigError("need 0 <= tau_l < tau_u <= 1")
        if not 0.0 <= self.eta_l <= self.eta_u <= 1.0:
            raise OcpConfigError("need 0 <= eta_l <= eta_u <= 1")
        if self.eta_l < self.tau_l or self.eta_u > self.tau_u:
            raise OcpConfigError("terminal band [eta_l, eta_u] must lie inside [tau_l, tau_u]")
        if self.fade_penalty < 0 or self.fade_per_band < 0:
            raise OcpConfigError("fade penalty and fade-per-band must be nonnegative")
        if self.p_max <= 0 or self.p_min < 0:
            raise OcpConfigError("power limits must be positive")
        if not self.v_min < self.v_max:
            raise OcpConfigError("need v_min < v_max")

    @classmethod
    def from_percent_units(cls, penalty_per_percent=12000.0, percent_per_mw=0.0024, **kw) -> OcpConfig:
        return cls(fade_penalty=penalty_per_percent * PERCENT,
                   fade_per_band=percent_per_mw / PERCENT, **kw)

    @property
    def reservation_price(self) -> float:
        """Marginal fade cost of one MW of band for one hour ($/MW)."""
        return self.fade_penalty * self.fade_per_band

    def with_(self, **kw) -> OcpConfig:
        return replace(self, **kw)


class _Index:
    def __init__(self):
        self.n = 0
        self.map: dict[str, np.ndarray] = {}

    def add(self, name, count):
        idx = np.arange(self.n, self.n + count)
        self.n += count
        self.map[name] = idx
        return idx


def _check_slice(alpha, fr_price, energy_price, cfg: OcpConfig):
    alpha = np.asarray(alpha, dtype=float)
    fr_price = np.asarray(fr_price, dtype=float)
    energy_price = np.asarray(energy_price, dtype=float)
    if alpha.shape != (cfg.N, cfg.S_ocp):
        raise OcpConfigError(f"FR slice must have shape ({cfg.N}, {cfg.S_ocp}), got {alpha.shape}")
    if fr_price.shape != (cfg.N,) or energy_price.shape != (cfg.N,):
        raise OcpConfigError("price slices must have length N")
    return alpha, fr_price, energy_price


def aggregate_signal(alpha, S_ocp: int) -> np.ndarray:
    """Block-average an ``(hours, S)`` signal down to ``S_ocp`` steps per hour."""
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    S = alpha.shape[1]
    if S % S_ocp:
        raise OcpConfigError(f"plant steps {S} not a multiple of S_ocp={S_ocp}")
    return alpha.reshape(alpha.shape[0], S_ocp, S // S_ocp).mean(axis=2)


def _commitment_columns(ix: _Index, cfg: OcpConfig, G: int):
    """Adds F, O and L (hourly or per step) and returns per-step column maps."""
    S = cfg.S_ocp
    hour = np.repeat(np.arange(cfg.N), S)
    F = ix.add("F", cfg.N)
    O = ix.add("O", cfg.N)
    if cfg.flexible_load:
        L = ix.add("L", G)
        L_step = L
    else:
        L = ix.add("L", cfg.N)
        L_step = L[hour]
    return F, O, L, hour, L_step


def _commitment_bounds(lo, hi, F, O, L, cfg: OcpConfig):
    lo[F], hi[F] = 0.0, cfg.p_max
    # purchases and loads are limited by the converter rating
    lo[O], hi[O] = 0.0, cfg.p_max
    lo[L], hi[L] = 0.0, cfg.p_min


def _lp_core(alpha, fr_price, energy_price, E0, Cf0, cap, cfg: OcpConfig, fade: bool):
    alpha, fr_price, energy_price = _check_slice(alpha, fr_price, energy_price, cfg)
    N, S = cfg.N, cfg.S_ocp
    G = N * S
    dt_h = 1.0 / S
    ix = _Index()
    F, O, L, hour, L_step = _commitment_columns(ix, cfg, G)
    P = ix.add("P", G)
    E = ix.add("E", G)
    cf = ix.add("Cf", N) if fade else None
    n = ix.n
    rows, cols, vals = [], [], []

    def put(r, c, v):
        r, c, v = np.broadcast_arrays(np.asarray(r), np.asarray(c), np.asarray(v, dtype=float))
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    g = np.arange(G)
    r_couple = g
    put(r_couple, P, 1.0)
    put(r_couple, F[hour], -alpha.ravel())
    put(r_couple, O[hour], -1.0)
    put(r_couple, L_step, 1.0)
    r_energy = G + g
    put(r_energy, E, 1.0)
    put(r_energy[1:], E[:-1], -1.0)
    put(r_energy, P, -dt_h)
    m = 2 * G
    lo_row = np.zeros(m)
    lo_row[G] = E0
    cost = np.zeros(n)
    cost[F] = -fr_price + cfg.tie_break
    cost[O] = energy_price + cfg.tie_break
    cost[L] = cfg.tie_break
    cf_scale = 1.0
    if fade:
        # fade increments in units of lambda * 1 MW so the LP stays well scaled
        cf_scale = cfg.fade_per_band if cfg.fade_per_band > 0 else 1.0
        r_fade = m + np.arange(N)
        put(r_fade, cf, 1.0)
        put(r_fade[1:], cf[:-1], -1.0)
        put(r_fade, F, -cfg.fade_per_band / cf_scale)
        m += N
        lo_row = np.concatenate((lo_row, np.zeros(N)))
        cost[cf[-1]] += cfg.fade_penalty * cf_scale
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, n))
    x_lo = np.full(n, -np.inf)
    x_hi = np.full(n, np.inf)
    _commitment_bounds(x_lo, x_hi, F, O, L, cfg)
    x_lo[P], x_hi[P] = -cfg.p_min, cfg.p_max
    x_lo[E], x_hi[E] = cfg.tau_l * cap, cfg.tau_u * cap
    x_lo[E[-1]] = max(x_lo[E[-1]], cfg.eta_l * cap)
    x_hi[E[-1]] = min(x_hi[E[-1]], cfg.eta_u * cap)
    x0 = np.zeros(n)
    x0[E] = E0
    meta = {"kind": "lf_fade" if fade else "lf", "E0": E0, "Cf0": Cf0, "cap": cap,
            "cf_scale": cf_scale, "cfg": cfg}
    return LpProblem(cost, A, lo_row, lo_row.copy(), x_lo, x_hi, index=ix.map, x0=x0, meta=meta)


def build_lf_lp(alpha, fr_price, energy_price, E0: float, Cf0: float, cfg: OcpConfig,
                e_max: float = 1.0) -> LpProblem:
    """Energy-balance LP with fade frozen at ``Cf0``.

    ``alpha`` must already be at ``S_ocp`` resolution, shape ``(N, S_ocp)``.
    Energy moves by ``P * (1/S_ocp)`` MWh per step.
    """
    cap = (1.0 - Cf0) * e_max
    return _lp_core(alpha, fr_price, energy_price, E0, Cf0, cap, cfg, fade=False)


def build_lf_fade_lp(alpha, fr_price, energy_price, E0: float, Cf0: float, cfg: OcpConfig,
                     e_max: float = 1.0) -> LpProblem:
    """LF LP plus hourly fade states ``Cf_k = Cf_{k-1} + lambda F_k``.

    The penalty prices the fade accumulated over the whole horizon.
    """
    cap = (1.0 - Cf0) * e_max
    return _lp_core(alpha, fr_price, energy_price, E0, Cf0, cap, cfg, fade=True)


# ---------------------------------------------------------------- HF NLP

STEP_VARS = ("P", "cn", "cp", "df", "cf", "csn", "csp", "phin", "phip",
             "etan", "etap", "Jn", "Jp", "Jsd", "I", "V", "E")


def hf_variable_count(N: int, S: int, flexible_load: bool = False) -> int:
    per_step = len(STEP_VARS) + (1 if flexible_load else 0)
    return (2 if flexible_load else 3) * N + per_step * N * S


@dataclass
class HfScales:
    """Unit conversions between NLP variables and physical quantities."""

    current: float  # A per unit I (1C pack current)
    j_n: float  # A/m^2 per unit J_n
    j_p: float
    j_sd: float  # A/m^2 per unit J_sd
    film: float  # m per unit film increment
    fade: float  # fade fraction per unit fade increment
    c_n: float  # mol/m^3 per unit stoichiometry
    c_p: float


@dataclass
class _Term:
    """Vectorized nonlinear constraint term with its fixed sparsity."""

    rows: np.ndarray
    cols: tuple  # variable index arrays the term depends on
    fn: object  # fn(*vals) -> (value, [d/dcol], {(a, b): d2}) with a >= b
    hkeys: tuple  # keys of the second-derivative dict


class _Structure:
    """Fixed CSR pattern for summed (row, col, value) triplets."""

    def __init__(self, rows, cols, shape):
        self.shape = shape
        key = rows.astype(np.int64) * shape[1] + cols
        uniq, self.inverse = np.unique(key, return_inverse=True)
        r = uniq // shape[1]
        self.indices = (uniq % shape[1]).astype(np.int32)
        self.indptr = np.searchsorted(r, np.arange(shape[0] + 1)).astype(np.int32)
        self.nnz = len(uniq)

    def build(self, vals):
        data = np.bincount(self.inverse, weights=vals, minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


def _q(c):
    """sqrt(c (1 - c)) with first and second derivatives."""
    q = np.sqrt(c * (1.0 - c))
    dq = (1.0 - 2.0 * c) / (2.0 * q)
    d2q = -1.0 / (4.0 * q ** 3)
    return q, dq, d2q


def build_hf_nlp(alpha, fr_price, energy_price, x0: CellState, p: CellParameters,
                 cfg: OcpConfig, start: np.ndarray | None = None) -> NlpProblem:
    """Backward-Euler transcription of the cell model over ``N`` hours.

    ``alpha`` has shape ``(N, S_ocp)``. The initial point is the rest
    trajectory from ``x0`` unless ``start`` (a full variable vector) is given.
    The objective is
    ``sum(pi_f F) - sum(pi_e O) - fade_penalty * (Cf_end - Cf(x0))``, negated.
    """
    alpha, fr_price, energy_price = _check_slice(alpha, fr_price, energy_price, cfg)
    x0.check(p)
    N, S = cfg.N, cfg.S_ocp
    G = N * S
    dt = 3600.0 / S
    c = p.constants
    f = c.F / (c.R * p.temperature)
    n_el, p_el, side = p.neg, p.pos, p.side
    Ebar = p.energy
    Isc = p.nominal_current
    sc = HfScales(
        current=Isc, j_n=Isc / n_el.area, j_p=Isc / p_el.area, j_sd=1.0,
        film=1e-12, fade=1e-5, c_n=n_el.max_concentration, c_p=p_el.max_concentration,
    )
    theta0 = x0.c_avg_n / n_el.max_concentration
    active = side.exchange_current_density > 0
    if active:
        Un0 = float(n_el.ocv(theta0))
        sc.j_sd = side.exchange_current_density * math.exp(-f * (Un0 - side.reference_potential))

    ix = _Index()
    F, O, L, hour, L_step = _commitment_columns(ix, cfg, G)
    # interleave the step variables so each step is a contiguous block
    base = ix.n
    nv = len(STEP_VARS)
    for j, name in enumerate(STEP_VARS):
        ix.map[name] = base + j + nv * np.arange(G)
    ix.n = base + nv * G
    v = {name: ix.map[name] for name in STEP_VARS}
    n = ix.n

    # row blocks
    eq_names = ("dyn_cn", "dyn_cp", "dyn_df", "dyn_cf", "surf_n", "surf_p", "bv_n", "bv_p",
                "eta_n", "eta_p", "side", "bal_p", "bal_n", "volt", "power", "energy", "couple")
    rix = _Index()
    for name in eq_names:
        rix.add(name, G)
    rix.add("e_lo", G)
    rix.add("e_hi", G)
    terminal_eq = cfg.eta_l == cfg.eta_u
    rix.add("term_lo", 1)
    if not terminal_eq:
        rix.add("term_hi", 1)
    R = rix.map
    m = rix.n
    c_lo = np.zeros(m)
    c_hi = np.zeros(m)

    lin_r, lin_c, lin_v = [], [], []

    def put(r, cidx, val):
        r, cidx, val = np.broadcast_arrays(np.asarray(r), np.asarray(cidx), np.asarray(val, dtype=float))
        lin_r.append(r.ravel())
        lin_c.append(cidx.ravel())
        lin_v.append(val.ravel())

    F_ = c.F
    a_cn = 3.0 * sc.j_n * dt / (n_el.radius * F_ * n_el.max_concentration)
    a_cp = 3.0 * sc.j_p * dt / (p_el.radius * F_ * p_el.max_concentration)
    a_df = sc.j_sd * side.molar_mass * dt / (side.density * F_ * sc.film)
    a_cf = sc.j_sd * n_el.area * dt / (p.capacity * sc.fade)
    b_n = sc.j_n * n_el.radius / (5.0 * n_el.diffusivity * F_ * n_el.max_concentration)
    b_p = sc.j_p * p_el.radius / (5.0 * p_el.diffusivity * F_ * p_el.max_concentration)
    K0 = (side.initial_resistance + x0.delta_f / side.conductivity) * Isc / n_el.area
    Kf = sc.film / side.conductivity * Isc / n_el.area
    Kp = Isc / 1e6
    A_n = 2.0 * F_ * n_el.rate_constant * math.sqrt(p.electrolyte_concentration) * n_el.max_concentration / sc.j_n
    A_p = 2.0 * F_ * p_el.rate_constant * math.sqrt(p.electrolyte_concentration) * p_el.max_concentration / sc.j_p
    bh = 0.5 * f

    # dynamics
    for name, var, a, flux in (("dyn_cn", "cn", a_cn, "Jn"), ("dyn_cp", "cp", a_cp, "Jp"),
                               ("dyn_df", "df", a_df, "Jsd"), ("dyn_cf", "cf", a_cf, "Jsd")):
        r = R[name]
        put(r, v[var], 1.0)
        put(r[1:], v[var][:-1], -1.0)
        put(r, v[flux], a)
    c_lo[R["dyn_cn"][0]] = c_hi[R["dyn_cn"][0]] = theta0
    c_lo[R["dyn_cp"][0]] = c_hi[R["dyn_cp"][0]] = x0.c_avg_p / p_el.max_concentration
    # surface relations
    put(R["surf_n"], v["csn"], 1.0)
    put(R["surf_n"], v["cn"], -1.0)
    put(R["surf_n"], v["Jn"], b_n)
    put(R["surf_p"], v["csp"], 1.0)
    put(R["surf_p"], v["cp"], -1.0)
    put(R["surf_p"], v["Jp"], b_p)
    put(R["bv_n"], v["Jn"], 1.0)
    put(R["bv_p"], v["Jp"], 1.0)
    put(R["eta_n"], v["etan"], 1.0)
    put(R["eta_n"], v["phin"], -1.0)
    put(R["eta_n"], v["I"], -K0)
    put(R["eta_p"], v["etap"], 1.0)
    put(R["eta_p"], v["phip"], -1.0)
    if active:
        put(R["side"], v["etan"], f)
        rhs = math.log(side.exchange_current_density / sc.j_sd) + f * side.reference_potential
        c_lo[R["side"]] = c_hi[R["side"]] = rhs
    else:
        put(R["side"], v["Jsd"], 1.0)
    put(R["bal_p"], v["Jp"], 1.0)
    put(R["bal_p"], v["I"], -1.0)
    put(R["bal_n"], v["Jn"], 1.0)
    put(R["bal_n"], v["Jsd"], sc.j_sd / sc.j_n)
    put(R["bal_n"], v["I"], 1.0)
    put(R["volt"], v["V"], 1.0)
    put(R["volt"], v["phip"], -1.0)
    put(R["volt"], v["phin"], 1.0)
    put(R["power"], v["P"], 1.0)
    put(R["energy"], v["E"], 1.0)
    put(R["energy"], v["cn"], -Ebar)
    put(R["couple"], v["P"], 1.0)
    put(R["couple"], F[hour], -alpha.ravel())
    put(R["couple"], O[hour], -1.0)
    put(R["couple"], L_step, 1.0)
    # energy bounds with the fade-dependent usable capacity
    cap0 = (1.0 - x0.fade) * Ebar
    put(R["e_lo"], v["E"], 1.0)
    put(R["e_lo"], v["cf"], cfg.tau_l * Ebar * sc.fade)
    c_lo[R["e_lo"]], c_hi[R["e_lo"]] = cfg.tau_l * cap0, np.inf
    put(R["e_hi"], v["E"], 1.0)
    put(R["e_hi"], v["cf"], cfg.tau_u * Ebar * sc.fade)
    c_lo[R["e_hi"]], c_hi[R["e_hi"]] = -np.inf, cfg.tau_u * cap0
    last = G - 1
    put(R["term_lo"], v["E"][last], 1.0)
    put(R["term_lo"], v["cf"][last], cfg.eta_l * Ebar * sc.fade)
    if terminal_eq:
        c_lo[R["term_lo"]] = c_hi[R["term_lo"]] = cfg.eta_l * cap0
    else:
        c_lo[R["term_lo"]], c_hi[R["term_lo"]] = cfg.eta_l * cap0, np.inf
        put(R["term_hi"], v["E"][last], 1.0)
        put(R["term_hi"], v["cf"][last], cfg.eta_u * Ebar * sc.fade)
        c_lo[R["term_hi"]], c_hi[R["term_hi"]] = -np.inf, cfg.eta_u * cap0

    lin_r = np.concatenate(lin_r)
    lin_c = np.concatenate(lin_c)
    lin_v = np.concatenate(lin_v)
    A_lin = sp.csr_matrix((lin_v, (lin_r, lin_c)), shape=(m, n))

    ocv_n, ocv_p = n_el.ocv, p_el.ocv

    def U(ocv, x):
        return ocv(x), ocv(x, 1), ocv(x, 2)

    # nonlinear terms: each returns value, gradient list and Hessian dict
    def t_bv_n(cs, eta):
        q, dq, d2q = _q(cs)
        sh, ch = np.sinh(bh * eta), np.cosh(bh * eta)
        val = -A_n * q * sh
        return val, [-A_n * dq * sh, -A_n * q * bh * ch], {
            (0, 0): -A_n * d2q * sh, (1, 0): -A_n * dq * bh * ch, (1, 1): -A_n * q * bh * bh * sh}

    def t_bv_p(cs, eta):
        q, dq, d2q = _q(cs)
        sh, ch = np.sinh(bh * eta), np.cosh(bh * eta)
        val = -A_p * q * sh
        return val, [-A_p * dq * sh, -A_p * q * bh * ch], {
            (0, 0): -A_p * d2q * sh, (1, 0): -A_p * dq * bh * ch, (1, 1): -A_p * q * bh * bh * sh}

    def t_eta_n(cs, df, I):
        u, du, d2u = U(ocv_n, cs)
        return u - Kf * df * I, [du, -Kf * I, -Kf * df], {(0, 0): d2u, (2, 1): np.full_like(I, -Kf)}

    def t_eta_p(cs):
        u, du, d2u = U(ocv_p, cs)
        return u, [du], {(0, 0): d2u}

    def t_side(jsd, cs):
        u, du, d2u = U(ocv_n, cs)
        return np.log(-jsd) + f * u, [1.0 / jsd, f * du], {(0, 0): -1.0 / jsd ** 2, (1, 1): f * d2u}

    def t_power(I, V):
        return -Kp * I * V, [-Kp * V, -Kp * I], {(1, 0): np.full_like(I, -Kp)}

    terms = [
        _Term(R["bv_n"], (v["csn"], v["etan"]), t_bv_n, ((0, 0), (1, 0), (1, 1))),
        _Term(R["bv_p"], (v["csp"], v["etap"]), t_bv_p, ((0, 0), (1, 0), (1, 1))),
        _Term(R["eta_n"], (v["csn"], v["df"], v["I"]), t_eta_n, ((0, 0), (2, 1))),
        _Term(R["eta_p"], (v["csp"],), t_eta_p, ((0, 0),)),
        _Term(R["power"], (v["I"], v["V"]), t_power, ((1, 0),)),
    ]
    if active:
        terms.append(_Term(R["side"], (v["Jsd"], v["csn"]), t_side, ((0, 0), (1, 1))))

    # fixed sparsity for the Jacobian and the (full, symmetric) Hessian
    jr = [lin_r]
    jc = [lin_c]
    hr, hc = [], []
    for t in terms:
        for col in t.cols:
            jr.append(t.rows)
            jc.append(col)
    hess_keys = []
    for t in terms:
        for (a, b) in t.hkeys:
            hess_keys.append((t, a, b))
            hr.append(t.cols[a])
            hc.append(t.cols[b])
            if a != b:
                hr.append(t.cols[b])
                hc.append(t.cols[a])
    jac_struct = _Structure(np.concatenate(jr), np.concatenate(jc), (m, n))
    hess_struct = _Structure(np.concatenate(hr), np.concatenate(hc), (n, n)) if hr else None

    cost = np.zeros(n)
    cost[F] = -fr_price + cfg.tie_break
    cost[O] = energy_price + cfg.tie_break
    cost[L] = cfg.tie_break
    cost[v["cf"][last]] += cfg.fade_penalty * sc.fade

    def evaluate(x):
        return [t.fn(*[x[col] for col in t.cols]) for t in terms]

    def constraints(x):
        out = A_lin @ x
        for t, (val, _, _) in zip(terms, evaluate(x)):
            out[t.rows] += val
        return out

    def jacobian(x):
        parts = [lin_v]
        for t, (_, grads, _) in zip(terms, evaluate(x)):
            for gvals in grads:
                parts.append(np.broadcast_to(gvals, (G,)))
        return jac_struct.build(np.concatenate(parts))

    def hessian(x, y, obj_factor=1.0):
        if hess_struct is None:
            return sp.csr_matrix((n, n))
        parts = []
        vals = {id(t): res for t, res in zip(terms, evaluate(x))}
        for t, a, b in hess_keys:
            w = y[t.rows] * vals[id(t)][2][(a, b)]
            parts.append(w)
            if a != b:
                parts.append(w)
        return hess_struct.build(np.concatenate(parts))

    x_lo = np.full(n, -np.inf)
    x_hi = np.full(n, np.inf)
    _commitment_bounds(x_lo, x_hi, F, O, L, cfg)
    for name in ("cn", "cp", "csn", "csp"):
        x_lo[v[name]], x_hi[v[name]] = 0.0, 1.0
    x_lo[v["P"]], x_hi[v["P"]] = -cfg.p_min, cfg.p_max
    x_lo[v["V"]], x_hi[v["V"]] = cfg.v_min, cfg.v_max
    if active:
        x_hi[v["Jsd"]] = 0.0
    x_lo[v["df"]] = 0.0
    x_lo[v["cf"]] = 0.0

    meta = {"kind": "hf", "scales": sc, "x0": x0, "params": p, "cfg": cfg, "alpha": alpha,
            "dt": dt, "cap0": cap0}
    prob = NlpProblem(
        n=n, m=m, x_lower=x_lo, x_upper=x_hi, c_lower=c_lo, c_upper=c_hi,
        x0=np.zeros(n),
        objective=lambda x: float(cost @ x), gradient=lambda x: cost,
        constraints=constraints, jacobian=jacobian, hessian=hessian,
        index=dict(ix.map, rows=R), meta=meta,
    )
    if start is None:
        start = trajectory_vector(prob, [(0.0, 0.0, 0.0)] * N)
    prob.x0 = np.asarray(start, dtype=float)
    return prob


def trajectory_vector(prob: NlpProblem, commitments, backend=None) -> np.ndarray:
    """Variable vector of a plant simulation of ``commitments`` at S_ocp.

    ``commitments`` is a sequence of ``(F, O, L)`` per hour (``L`` may be a
    per-step array when the load is flexible). Steps after a model failure
    repeat the last good values.
    """
    meta = prob.meta
    sc: HfScales = meta["scales"]
    p: CellParameters = meta["params"]
    cfg: OcpConfig = meta["cfg"]
    x0: CellState = meta["x0"]
    alpha = meta["alpha"]
    N, S = cfg.N, cfg.S_ocp
    G = N * S
    ix = prob.index
    x = np.zeros(prob.n)
    power = np.empty(G)
    for k, (Fk, Ok, Lk) in enumerate(commitments):
        x[ix["F"][k]] = Fk
        x[ix["O"][k]] = Ok
        if cfg.flexible_load:
            x[ix["L"][k * S:(k + 1) * S]] = Lk
        else:
            x[ix["L"][k]] = Lk
        power[k * S:(k + 1) * S] = alpha[k] * Fk + Ok - np.asarray(Lk)
    mod = kernel.get_backend(backend)
    ocv_n, ocv_p = kernel.ocv_tables(p, backend)
    out = np.full((G, kernel.N_COLS), np.nan)
    status, done, _, _, _, _ = mod.simulate_steps(
        x0.as_tuple(), power, meta["dt"], p.packed, ocv_n, ocv_p, (0.0, 0.0),
        -np.inf, np.inf, False, out,
    )
    if done == 0:
        raise ValueError("cell model failed on the first step of the trajectory")
    if done < G:
        out[done:] = out[done - 1]
    n_el, p_el = p.neg, p.pos
    I = out[:, kernel.COL_I]
    Jsd = out[:, kernel.COL_JSD]
    Jp = I / p_el.area
    Jn = -I / n_el.area - Jsd
    c = p.constants
    cn = out[:, kernel.COL_CN] / n_el.max_concentration
    cp = out[:, kernel.COL_CP] / p_el.max_concentration
    csn = cn - Jn * n_el.radius / (5.0 * n_el.diffusivity * c.F * n_el.max_concentration)
    csp = cp - Jp * p_el.radius / (5.0 * p_el.diffusivity * c.F * p_el.max_concentration)
    phin = out[:, kernel.COL_PHIN]
    phip = out[:, kernel.COL_PHIP]
    delta = out[:, kernel.COL_DF]
    Rf = p.side.initial_resistance + delta / p.side.conductivity
    vals = {
        "P": power, "cn": cn, "cp": cp,
        "df": (delta - x0.delta_f) / sc.film,
        "cf": (out[:, kernel.COL_CF] - x0.fade) / sc.fade,
        "csn": csn, "csp": csp, "phin": phin, "phip": phip,
        "etan": phin - n_el.ocv(csn) + Rf * I / n_el.area,
        "etap": phip - p_el.ocv(csp),
        "Jn": Jn / sc.j_n, "Jp": Jp / sc.j_p, "Jsd": Jsd / sc.j_sd,
        "I": I / sc.current, "V": out[:, kernel.COL_V], "E": out[:, kernel.COL_E],
    }
    for name, val in vals.items():
        x[ix[name]] = val
    return x


def hf_commitments(prob: NlpProblem, x) -> list[tuple[float, float, float]]:
    ix = prob.index
    cfg: OcpConfig = prob.meta["cfg"]
    S = cfg.S_ocp
    out = []
    for k in range(cfg.N):
        L = x[ix["L"][k * S:(k + 1) * S]] if cfg.flexible_load else x[ix["L"][k]]
        out.append((float(x[ix["F"][k]]), float(x[ix["O"][k]]), L if cfg.flexible_load else float(L)))
    return out


def profit(prob, x) -> float:
    """Objective value with the tie-break removed, as profit in $."""
    cfg: OcpConfig = prob.meta["cfg"]
    ix = prob.index
    val = -float(prob.objective(x))
    val += cfg.tie_break * float(np.sum(x[ix["F"]]) + np.sum(x[ix["O"]]) + np.sum(x[ix["L"]]))
    return val
