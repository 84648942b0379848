"""Receding-horizon experiment driver and its per-hour ledger."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from battmpc import market
from battmpc.cell import CellState
from battmpc.params import CellParameters
from battmpc.plant import HourlyCommitment, SimConfig
from battmpc.strategies import Kind, Plant, Strategy, StrategyConfig, adjust_band

log = logging.getLogger(__name__)

DEFAULT_HOURS = 17520
DEFAULT_EOL = 0.2


def eol_check(C_f: float, threshold: float = DEFAULT_EOL) -> bool:
    """True once the fade has reached the end-of-life threshold (inclusive)."""
    return C_f >= threshold


@dataclass(frozen=True)
class RunConfig:
    Y: int = DEFAULT_HOURS
    eol: float = DEFAULT_EOL
    soc0: float = 0.5  # initial E / E_max of a new cell
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    plant_steps: int | None = None  # defaults to the FR signal resolution
    backend: str | None = None
    deadline: float | None = None  # s; slower solves reuse the previous commitment

    def __post_init__(self):
        if self.Y < 1:
            raise ValueError("horizon Y must be at least one hour")
        if not 0.0 < self.eol <= 1.0:
            raise ValueError("EOL threshold must lie in (0, 1]")
        if not 0.0 <= self.soc0 <= 1.0:
            raise ValueError("initial state of charge must lie in [0, 1]")

    def sim_config(self, data: market.MarketData) -> SimConfig:
        steps = self.plant_steps or data.steps
        if steps != data.steps:
            raise ValueError(f"plant runs {steps} steps/hour but the FR signal has {data.steps}")
        o = self.strategy.ocp
        return SimConfig(steps=steps, tau_l=o.tau_l, tau_u=o.tau_u, p_max=o.p_max,
                         backend=self.backend)


@dataclass
class LedgerRow:
    hour: int  # 1-based hour index
    F: float
    O: float
    L: float
    fr_price: float
    energy_price: float
    revenue: float
    cost: float
    fade: float  # end of hour
    energy: float  # end of hour, MWh
    feasible: bool
    flagged: bool
    violation: str
    simulations: int
    status: str
    solve_time: float = 0.0

    @property
    def profit(self) -> float:
        return self.revenue - self.cost


# wall time varies between runs so it stays out of the default export
_CSV_FIELDS = [f.name for f in fields(LedgerRow) if f.name != "solve_time"]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ClosedLoopLedger:
    rows: list = field(default_factory=list)
    initial_fade: float = 0.0
    eol_hour: int | None = None
    threshold: float = DEFAULT_EOL
    strategy: str = ""
    horizon: int | None = None  # MPC horizon in hours, None for the fixed band

    @property
    def hours(self) -> int:
        return len(self.rows)

    @property
    def revenue(self) -> float:
        return math.fsum(r.revenue for r in self.rows)

    @property
    def cost(self) -> float:
        return math.fsum(r.cost for r in self.rows)

    @property
    def profit(self) -> float:
        return math.fsum(r.revenue - r.cost for r in self.rows)

    @property
    def cumulative_band(self) -> float:
        return math.fsum(r.F for r in self.rows)

    @property
    def purchased(self) -> float:
        return math.fsum(r.O for r in self.rows)

    @property
    def final_fade(self) -> float:
        return self.rows[-1].fade if self.rows else self.initial_fade

    @property
    def lifetime_days(self) -> int | None:
        # whole days, truncated; None while the threshold was never reached
        return None if self.eol_hour is None else self.eol_hour // 24

    @property
    def flagged_hours(self) -> int:
        return sum(r.flagged for r in self.rows)

    def summary(self) -> dict:
        return {
            "strategy": self.strategy,
            "horizon_hours": self.horizon,
            "hours": self.hours,
            "eol_reached": self.eol_hour is not None,
            "eol_hour": self.eol_hour,
            "lifetime_days": self.lifetime_days,
            "revenue": self.revenue,
            "cost": self.cost,
            "profit": self.profit,
            "cumulative_fr_band_mw": self.cumulative_band,
            "purchased_mwh": self.purchased,
            "final_fade": self.final_fade,
            "flagged_hours": self.flagged_hours,
        }

    def to_csv(self, path=None, timings: bool = False) -> str:
        cols = _CSV_FIELDS + (["solve_time"] if timings else [])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in cols])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def write_summary(self, path) -> str:
        text = json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"
        Path(path).write_text(text, encoding="utf-8")
        return text


def run(cfg: RunConfig, data: market.MarketData, p: CellParameters, plant=None,
        strategy: Strategy | None = None, x0: CellState | None = None, on_hour=None) -> ClosedLoopLedger:
    """Drive the strategy hour by hour until ``Y`` hours or end of life.

    Each hour: commit, adjust the band against a plant simulation, inject
    the accepted trace and advance the state. A flagged hour is recorded and
    the run continues. ``on_hour(row, trace)`` is called after every hour.
    ``plant`` may be any object with ``simulate``, ``energy`` and ``e_max``
    (see :class:`~battmpc.strategies.Plant`).
    """
    if plant is None:
        plant = Plant(p, cfg.sim_config(data))
    if strategy is None:
        strategy = Strategy(cfg.strategy, data, p)
    x = x0 if x0 is not None else CellState.at_soc(p, cfg.soc0)
    kind = cfg.strategy.kind
    ledger = ClosedLoopLedger(initial_fade=x.fade, threshold=cfg.eol, strategy=kind.value,
                              horizon=None if kind is Kind.FIXED_BAND else cfg.strategy.N)
    previous: HourlyCommitment | None = None
    for t in range(cfg.Y):
        alpha, fr, en = market.window(data, t, 1)
        d = strategy.commit(x, t)
        c = d.commitment
        if cfg.deadline is not None and d.solve_time > cfg.deadline and previous is not None:
            log.info("hour %d: solve took %.3fs, reusing previous commitment", t + 1, d.solve_time)
            c = previous
        adj = adjust_band(c, x, alpha[0], cfg.strategy, plant)
        c, trace = adj.commitment, adj.trace
        x = trace.end
        row = LedgerRow(
            hour=t + 1, F=c.F, O=c.O, L=c.L,
            fr_price=float(fr[0]), energy_price=float(en[0]),
            revenue=float(fr[0]) * c.F, cost=float(en[0]) * c.O,
            fade=float(x.fade), energy=float(plant.energy(x)),
            feasible=trace.feasible, flagged=adj.flagged,
            violation=trace.verdict.violation.value, simulations=adj.simulations,
            status=d.status, solve_time=d.solve_time,
        )
        ledger.rows.append(row)
        previous = c
        if on_hour is not None:
            on_hour(row, trace)
        if eol_check(x.fade, cfg.eol):
            ledger.eol_hour = t + 1
            break
    return ledger
