"""Hour-level plant: simulate a committed hour at FR-signal resolution."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from battmpc import kernel
from battmpc.cell import AlgebraicState, CellState, reconstruct
from battmpc.params import CellParameters


class Violation(enum.Enum):
    NONE = "feasible"
    OVERCHARGE = "overcharge"
    OVERDISCHARGE = "overdischarge"
    SOLVER_FAILURE = "solver_failure"


_FROM_STATUS = {
    kernel.OK: Violation.NONE,
    kernel.OVERCHARGE: Violation.OVERCHARGE,
    kernel.OVERDISCHARGE: Violation.OVERDISCHARGE,
    kernel.NONCONVERGENCE: Violation.SOLVER_FAILURE,
    kernel.DOMAIN: Violation.SOLVER_FAILURE,
}


@dataclass(frozen=True)
class HourlyCommitment:
    F: float = 0.0  # FR band, MW
    O: float = 0.0  # day-ahead purchase, MW
    L: float = 0.0  # load, MW

    def __post_init__(self):
        if self.F < 0 or self.O < 0 or self.L < 0:
            raise ValueError(f"commitments must be nonnegative, got {self}")

    def power(self, alpha) -> np.ndarray:
        return np.asarray(alpha, dtype=float) * self.F + self.O - self.L


REST = HourlyCommitment()


@dataclass(frozen=True)
class SimConfig:
    steps: int = 1800  # plant steps per hour
    tau_l: float = 0.1
    tau_u: float = 0.9
    p_max: float = 10.0  # MW, charging and discharging limit
    stop_on_violation: bool = False
    backend: str | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps per hour must be positive")
        if not 0.0 <= self.tau_l < self.tau_u <= 1.0:
            raise ValueError("need 0 <= tau_l < tau_u <= 1")

    @property
    def dt(self) -> float:
        return 3600.0 / self.steps


@dataclass(frozen=True)
class Verdict:
    violation: Violation
    step: int | None = None  # 0-based step index of the first violation
    cause: str = ""

    @property
    def feasible(self) -> bool:
        return self.violation is Violation.NONE


@dataclass
class HourTrace:
    """Per-step record of one simulated hour.

    Arrays have length ``S``; rows after a solver failure (or after an early
    stop) are NaN. ``fade`` and ``film`` are end-of-step values.
    """

    commitment: HourlyCommitment
    start: CellState
    power: np.ndarray
    energy: np.ndarray
    voltage: np.ndarray
    fade_rate: np.ndarray
    fade: np.ndarray
    film: np.ndarray
    current: np.ndarray
    end: CellState
    end_point: AlgebraicState | None
    verdict: Verdict
    completed: int
    tau_l: float
    tau_u: float
    e_max: float
    dt: float
    raw: np.ndarray = field(repr=False, default=None)

    @property
    def feasible(self) -> bool:
        return self.verdict.feasible

    @property
    def steps(self) -> int:
        return len(self.power)

    @property
    def purchased_energy(self) -> float:
        """MWh bought from the day-ahead market over the hour."""
        return self.commitment.O

    @property
    def fr_energy(self) -> float:
        """Net MWh delivered to the battery by FR dispatch."""
        return float(np.mean(self.power - self.commitment.O + self.commitment.L))

    @property
    def net_energy(self) -> float:
        return float(np.sum(self.power) / self.steps)

    @property
    def fade_increment(self) -> float:
        return self.end.fade - self.start.fade


def simulate_hour(x0: CellState, c: HourlyCommitment, alpha, cfg: SimConfig,
                  p: CellParameters, guess: AlgebraicState | None = None) -> HourTrace:
    """Step the cell through one hour with ``P_s = alpha_s F + O - L``.

    The hour is marked infeasible at the first step whose end-of-step energy
    leaves ``[tau_l, tau_u] * (1 - C_f) * E_max`` (``C_f`` taken at the start
    of that step) or where the cell model fails. Trajectories are never
    clamped.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (cfg.steps,):
        raise ValueError(f"FR slice must have {cfg.steps} values, got shape {alpha.shape}")
    if np.any(np.abs(alpha) > 1.0):
        raise ValueError("FR signal values must lie in [-1, 1]")
    if c.F > cfg.p_max:
        raise ValueError(f"FR band {c.F} MW exceeds the {cfg.p_max} MW rating")
    mod = kernel.get_backend(cfg.backend)
    ocv_n, ocv_p = kernel.ocv_tables(p, cfg.backend)
    power = c.power(alpha)
    out = np.full((cfg.steps, kernel.N_COLS), np.nan)
    g = (guess.I_app, guess.J_sd) if guess is not None else (0.0, 0.0)
    status, done, state, g_new, viol, viol_step = mod.simulate_steps(
        x0.as_tuple(), power, cfg.dt, p.packed, ocv_n, ocv_p, g,
        cfg.tau_l, cfg.tau_u, cfg.stop_on_violation, out,
    )
    end = CellState(*state)
    if status != kernel.OK:
        cause = "Newton did not converge" if status == kernel.NONCONVERGENCE else "concentration out of range"
        if viol != kernel.OK:
            # the bound was already breached before the model gave out
            verdict = Verdict(_FROM_STATUS[viol], viol_step, f"cell model failed later at step {done}: {cause}")
        else:
            verdict = Verdict(Violation.SOLVER_FAILURE, done, cause)
        end_point = None
    else:
        verdict = Verdict(_FROM_STATUS[viol], viol_step if viol != kernel.OK else None)
        end_point = reconstruct(end, g_new[0], g_new[1], p) if done > 0 else None
    return HourTrace(
        commitment=c, start=x0, power=power,
        energy=out[:, kernel.COL_E], voltage=out[:, kernel.COL_V],
        fade_rate=out[:, kernel.COL_CR], fade=out[:, kernel.COL_CF],
        film=out[:, kernel.COL_DF], current=out[:, kernel.COL_I],
        end=end, end_point=end_point, verdict=verdict, completed=done,
        tau_l=cfg.tau_l, tau_u=cfg.tau_u, e_max=p.energy, dt=cfg.dt, raw=out,
    )


def check_feasibility(trace: HourTrace) -> Verdict:
    """Recompute the verdict from the recorded trajectory.

    Bounds are inclusive and use the fade at the start of each step.
    """
    if trace.verdict.violation is Violation.SOLVER_FAILURE:
        return trace.verdict
    fade_start = np.concatenate(([trace.start.fade], trace.fade[:-1]))
    cap = (1.0 - fade_start) * trace.e_max
    E = trace.energy
    n = trace.completed
    for s in range(n):
        if E[s] > trace.tau_u * cap[s]:
            return Verdict(Violation.OVERCHARGE, s)
        if E[s] < trace.tau_l * cap[s]:
            return Verdict(Violation.OVERDISCHARGE, s)
    if n < trace.steps and trace.verdict.feasible:
        return Verdict(Violation.SOLVER_FAILURE, n, "trace incomplete")
    return Verdict(Violation.NONE)
