"""Hourly decision policies and the shared band-adjustment loop.

Four policies emit an :class:`~battmpc.plant.HourlyCommitment` every hour:
a fixed FR band with energy-balance recovery, low-fidelity MPC (LP), the
fade-penalized low-fidelity MPC (LP) and high-fidelity MPC (NLP on the cell
model). LF policies only see ``(E, C_f)``; HF-MPC sees the full cell state.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from battmpc import market, ocp
from battmpc.cell import CellState
from battmpc.params import CellParameters
from battmpc.plant import REST, HourlyCommitment, HourTrace, SimConfig, simulate_hour
from battmpc.solvers import IpmOptions, SolveReport, Status, solve_lp, solve_nlp

log = logging.getLogger(__name__)


class Kind(enum.Enum):
    FIXED_BAND = "fixed-band"
    LF_MPC = "lf-mpc"
    LF_FADE_MPC = "lf-fade-mpc"
    HF_MPC = "hf-mpc"


@dataclass(frozen=True)
class StrategyConfig:
    kind: Kind = Kind.FIXED_BAND
    F_fixed: float = 0.0
    dF: float = 0.5
    ocp: ocp.OcpConfig = field(default_factory=ocp.OcpConfig)
    warm_start: bool = False  # primal-only IPM warm starts rarely pay off

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", Kind(self.kind))
        if not self.dF > 0:
            raise ValueError("band decrement must be positive")
        if not 0.0 <= self.F_fixed <= self.ocp.p_max:
            raise ValueError(f"fixed band must lie in [0, {self.ocp.p_max}] MW")

    @property
    def N(self) -> int:
        return self.ocp.N

    @property
    def max_simulations(self) -> int:
        return math.ceil(self.ocp.p_max / self.dF) + 1


class Plant:
    """The cell simulated at FR-signal resolution."""

    def __init__(self, p: CellParameters, sim: SimConfig):
        self.p = p
        self.sim = sim
        self.calls = 0

    @property
    def e_max(self) -> float:
        return self.p.energy

    def energy(self, x: CellState) -> float:
        return x.energy(self.p)

    def simulate(self, x: CellState, c: HourlyCommitment, alpha) -> HourTrace:
        self.calls += 1
        return simulate_hour(x, c, alpha, self.sim, self.p)


def heuristic_commit(E_now: float, Cf_now: float, F: float, alpha_next, eta_l: float,
                     e_max: float = 1.0) -> HourlyCommitment:
    """Band ``F`` plus the purchase or load that returns E to its target.

    ``E* = eta_l (1 - Cf) E_max`` and ``dE = E* - E_now - mean(alpha) F``;
    a positive ``dE`` is bought, a negative one is sold as load.
    """
    target = eta_l * (1.0 - Cf_now) * e_max
    dE = target - E_now - float(np.mean(alpha_next)) * F
    if dE > 0:
        return HourlyCommitment(F, dE, 0.0)
    if dE < 0:
        return HourlyCommitment(F, 0.0, -dE)
    return HourlyCommitment(F, 0.0, 0.0)


@dataclass
class Adjusted:
    commitment: HourlyCommitment
    trace: HourTrace
    simulations: int
    flagged: bool = False  # even the rest commitment violated the bounds

    def __iter__(self):
        return iter((self.commitment, self.trace))


def adjust_band(c: HourlyCommitment, x_now: CellState, alpha_next, cfg: StrategyConfig,
                plant: Plant) -> Adjusted:
    """Reduce the band by ``dF`` until the hour simulates feasibly.

    Each reduced band gets a fresh purchase/load from the energy-balance rule.
    The last level (F = 0) is the rest commitment itself, so at most
    ``ceil(P_max / dF) + 1`` simulations are run. If rest also violates the
    bounds its trace is returned and the hour is flagged.
    """
    trace = plant.simulate(x_now, c, alpha_next)
    sims = 1
    F = c.F
    E_now = plant.energy(x_now)
    while not trace.feasible and F > 0:
        F = max(F - cfg.dF, 0.0)
        if F > 0:
            c = heuristic_commit(E_now, x_now.fade, F, alpha_next, cfg.ocp.eta_l, plant.e_max)
        else:
            c = REST
        trace = plant.simulate(x_now, c, alpha_next)
        sims += 1
    flagged = False
    if not trace.feasible and c != REST:
        # only reached when the incoming commitment already had F = 0
        c = REST
        trace = plant.simulate(x_now, c, alpha_next)
        sims += 1
    if not trace.feasible:
        flagged = True
        log.warning("rest commitment infeasible (%s at step %s); hour flagged",
                    trace.verdict.violation.value, trace.verdict.step)
    return Adjusted(c, trace, sims, flagged)


@dataclass
class Decision:
    commitment: HourlyCommitment
    plan: list  # every hour of the solved horizon, first entry injected
    solve_time: float = 0.0
    status: str = "heuristic"
    cause: str = ""
    report: SolveReport | None = field(default=None, repr=False)


SNAP = 1e-6  # MW, about the NLP tolerance


def _snap(v, hi=math.inf):
    # interior-point solutions sit a hair inside their bounds
    v = float(v)
    if v < SNAP:
        return 0.0
    if v > hi - SNAP:
        return hi
    return v


def _commitment_from(F, O, L, cfg: ocp.OcpConfig) -> HourlyCommitment:
    return HourlyCommitment(_snap(F, cfg.p_max), _snap(O, cfg.p_max), _snap(np.mean(L), cfg.p_min))


class Strategy:
    """Stateful policy advanced once per hour by the closed-loop driver."""

    def __init__(self, cfg: StrategyConfig, data: market.MarketData, p: CellParameters,
                 solver_options: IpmOptions | None = None):
        self.cfg = cfg
        self.data = data
        self.p = p
        self.solver_options = solver_options
        self._previous: list | None = None
        if data.steps % cfg.ocp.S_ocp and cfg.kind is not Kind.FIXED_BAND:
            raise ValueError(f"S_ocp={cfg.ocp.S_ocp} must divide the {data.steps} signal steps")

    def commit(self, x_now: CellState, t: int) -> Decision:
        if self.cfg.kind is Kind.FIXED_BAND:
            alpha, _, _ = market.window(self.data, t, 1)
            c = heuristic_commit(x_now.energy(self.p), x_now.fade, self.cfg.F_fixed, alpha[0],
                                 self.cfg.ocp.eta_l, self.p.energy)
            return Decision(c, [c])
        return mpc_commit(x_now, t, self.data, self.cfg, self.p, self)


def _lf_problem(x_now, t, data, cfg: StrategyConfig, p):
    o = cfg.ocp
    alpha, fr, en = market.window(data, t, o.N)
    a = ocp.aggregate_signal(alpha, o.S_ocp)
    build = ocp.build_lf_fade_lp if cfg.kind is Kind.LF_FADE_MPC else ocp.build_lf_lp
    return build(a, fr, en, x_now.energy(p), x_now.fade, o, e_max=p.energy)


def _hf_problem(x_now, t, data, cfg: StrategyConfig, p, previous):
    o = cfg.ocp
    alpha, fr, en = market.window(data, t, o.N)
    a = ocp.aggregate_signal(alpha, o.S_ocp)
    prob = ocp.build_hf_nlp(a, fr, en, x_now, p, o)
    if previous is not None and cfg.warm_start:
        # shift the previous plan by one hour and repeat its last hour
        shifted = list(previous[1:]) + [previous[-1]]
        try:
            prob.x0 = ocp.trajectory_vector(prob, shifted)
        except ValueError:
            pass
    return prob


def mpc_commit(x_now: CellState, t: int, data: market.MarketData, cfg: StrategyConfig,
               p: CellParameters, state: Strategy | None = None) -> Decision:
    """Solve the horizon problem for hours t+1..t+N and return hour t+1.

    Solver failures fall back to the rest commitment; the cause is logged
    and returned in the decision.
    """
    if cfg.kind is Kind.FIXED_BAND:
        raise ValueError("mpc_commit needs an MPC strategy kind")
    o = cfg.ocp
    t0 = time.perf_counter()
    opts = state.solver_options if state is not None else None
    try:
        if cfg.kind is Kind.HF_MPC:
            previous = state._previous if state is not None else None
            prob = _hf_problem(x_now, t, data, cfg, p, previous)
            rep = solve_nlp(prob, opts=opts)
            if rep.status is not Status.OPTIMAL and previous is not None and cfg.warm_start:
                # a stale plan can start the solver in a bad basin
                log.info("hour %d: warm start gave %s, retrying cold", t + 1, rep.status.value)
                prob = _hf_problem(x_now, t, data, cfg, p, None)
                rep = solve_nlp(prob, opts=opts)
            plan = ocp.hf_commitments(prob, rep.x)
        else:
            prob = _lf_problem(x_now, t, data, cfg, p)
            rep = solve_lp(prob, opts)
            ix = prob.index
            S = o.S_ocp
            plan = []
            for k in range(o.N):
                L = rep.x[ix["L"][k * S:(k + 1) * S]] if o.flexible_load else rep.x[ix["L"][k]]
                plan.append((float(rep.x[ix["F"][k]]), float(rep.x[ix["O"][k]]), L))
    except (ValueError, ArithmeticError) as exc:
        cause = f"{type(exc).__name__}: {exc}"
        log.warning("hour %d: OCP build/solve failed (%s); committing rest", t + 1, cause)
        return Decision(REST, [REST], time.perf_counter() - t0, "error", cause)
    elapsed = time.perf_counter() - t0
    if rep.status is not Status.OPTIMAL:
        cause = f"{rep.status.value}: {rep.message}"
        log.warning("hour %d: solver returned %s; committing rest", t + 1, cause)
        if state is not None:
            state._previous = None
        return Decision(REST, [REST], elapsed, rep.status.value, cause, rep)
    commitments = [_commitment_from(F, O, L, o) for F, O, L in plan]
    if state is not None:
        state._previous = [(c.F, c.O, c.L) for c in commitments]
    return Decision(commitments[0], commitments, elapsed, rep.status.value, "", rep)


@dataclass
class SweepRow:
    F: float
    revenue: float
    cost: float
    profit: float
    fade: float
    lifetime_days: int | None
    hours: int
    ledger: object = field(default=None, repr=False, compare=False)

    @property
    def revenue_per_fade(self) -> float:
        return self.revenue / self.fade if self.fade > 0 else 0.0


@dataclass
class SweepResult:
    rows: list

    def _best(self, key):
        # strict improvement only, so ties keep the smaller band
        best = None
        for r in sorted(self.rows, key=lambda r: r.F):
            if best is None or key(r) > key(best):
                best = r
        return best

    @property
    def best_profit(self) -> SweepRow:
        return self._best(lambda r: r.profit)

    @property
    def best_ratio(self) -> SweepRow:
        return self._best(lambda r: r.revenue_per_fade)


def band_sweep(F_grid, data: market.MarketData, run_cfg, p: CellParameters, workers: int = 1,
               plant_factory=None) -> SweepResult:
    """Fixed-band closed loop for every band in ``F_grid``.

    Runs are independent; with ``workers > 1`` they execute on a thread pool
    and are merged in grid order.
    """
    from dataclasses import replace

    from battmpc import closed_loop

    grid = sorted(float(F) for F in F_grid)
    if not grid:
        raise ValueError("band grid is empty")

    def one(F):
        scfg = replace(run_cfg.strategy, kind=Kind.FIXED_BAND, F_fixed=F)
        cfg = replace(run_cfg, strategy=scfg)
        plant = plant_factory() if plant_factory is not None else None
        ledger = closed_loop.run(cfg, data, p, plant=plant)
        return SweepRow(F, ledger.revenue, ledger.cost, ledger.profit, ledger.final_fade - ledger.initial_fade,
                        ledger.lifetime_days, len(ledger.rows), ledger)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, grid))
    else:
        rows = [one(F) for F in grid]
    return SweepResult(rows)
