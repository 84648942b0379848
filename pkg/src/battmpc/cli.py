"""Command-line front end: ``battmpc simulate | sweep | run | report``.

Settings come from an optional TOML file (``--config``) and are overridden
by flags. Section headers in the file are optional and only group keys; the
keys are the long flag names with ``_`` for ``-``. The output directory can
also be set through ``BATTMPC_OUTPUT_DIR``, which beats the config file but
not ``--out``.

Exit codes: 0 success, 2 configuration or input error, 3 infeasible hour
(``simulate`` only).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from battmpc import closed_loop, market, ocp, params, plant, strategies
from battmpc.cell import CellState

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("battmpc")

OUTPUT_ENV = "BATTMPC_OUTPUT_DIR"
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

REPORT_COLUMNS = ("Horizon", "Life Time", "Revenue", "Cost", "Profit",
                  "Cumulative FR band", "Purchased Power")

DEFAULTS = {
    "params": None, "fr": None, "prices": None, "seed": 0, "synthetic_hours": 24,
    "steps": 1800, "out": "out", "force": False, "log_level": "WARNING",
    "hours": 1, "band": 0.0, "order": 0.0, "load": 0.0, "soc0": 0.5,
    "grid": "0,1,2,3,4,5,6,7,8,9,10", "workers": 1,
    "strategy": "fixed-band", "horizon": 1, "s_ocp": 60, "dF": 0.5, "eol": closed_loop.DEFAULT_EOL,
    "fade_penalty": 12000.0, "fade_rate": 0.0024,
    "tau_l": 0.1, "tau_u": 0.9, "eta_l": 0.5, "eta_u": 0.5, "p_max": 10.0,
    "timings": False, "trace": False, "backend": None,
}


class ConfigError(Exception):
    pass


def _add_common(ap: argparse.ArgumentParser, market_flags=True):
    g = ap.add_argument_group("common")
    g.add_argument("--config", help="TOML file with default settings")
    g.add_argument("--params", help="cell parameter TOML ('default' for the packaged set)")
    g.add_argument("--out", help=f"output directory (env {OUTPUT_ENV})")
    g.add_argument("--force", action="store_true", default=None, help="overwrite existing outputs")
    g.add_argument("--log-level", dest="log_level")
    g.add_argument("--backend", choices=("cython", "python"), help="plant kernel")
    if market_flags:
        g.add_argument("--fr", help="FR signal CSV (hour,step,alpha)")
        g.add_argument("--prices", help="price CSV (hour,fr_price,energy_price)")
        g.add_argument("--seed", type=int, help="seed for synthetic market data")
        g.add_argument("--synthetic-hours", dest="synthetic_hours", type=int)
        g.add_argument("--steps", type=int, help="FR steps per hour of synthetic data")
        g.add_argument("--soc0", type=float, help="initial E / E_max")


def _add_ocp(ap: argparse.ArgumentParser):
    g = ap.add_argument_group("strategy")
    g.add_argument("--strategy", choices=[k.value for k in strategies.Kind])
    g.add_argument("--horizon", type=int, help="MPC horizon N, hours")
    g.add_argument("--s-ocp", dest="s_ocp", type=int, help="OCP steps per hour")
    g.add_argument("--band", type=float, help="fixed FR band, MW")
    g.add_argument("--dF", dest="dF", type=float, help="band decrement, MW")
    g.add_argument("--hours", type=int, help="closed-loop horizon Y, hours")
    g.add_argument("--eol", type=float, help="end-of-life fade threshold")
    g.add_argument("--fade-penalty", dest="fade_penalty", type=float, help="$ per %% fade")
    g.add_argument("--fade-rate", dest="fade_rate", type=float, help="%% fade per MW of band")
    for name in ("tau_l", "tau_u", "eta_l", "eta_u"):
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    g.add_argument("--p-max", dest="p_max", type=float, help="power rating, MW")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="battmpc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate hours under a fixed commitment")
    _add_common(s)
    s.add_argument("--hours", type=int, help="number of consecutive hours")
    s.add_argument("--band", type=float, help="FR band F, MW")
    s.add_argument("--order", type=float, help="day-ahead purchase O, MW")
    s.add_argument("--load", type=float, help="load L, MW")
    for name in ("tau_l", "tau_u"):
        s.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    s.add_argument("--p-max", dest="p_max", type=float)

    w = sub.add_parser("sweep", help="fixed-band closed loop over a band grid")
    _add_common(w)
    _add_ocp(w)
    w.add_argument("--grid", help="comma-separated bands, MW")
    w.add_argument("--workers", type=int)

    r = sub.add_parser("run", help="closed-loop run of one strategy")
    _add_common(r)
    _add_ocp(r)
    r.add_argument("--timings", action="store_true", default=None, help="add solve times to the ledger CSV")
    r.add_argument("--trace", action="store_true", default=None, help="also write per-step states")

    p = sub.add_parser("report", help="comparison table from summary JSON files")
    p.add_argument("summaries", nargs="+")
    p.add_argument("--csv", help="also write the table as CSV")
    p.add_argument("--force", action="store_true", default=None)
    p.add_argument("--log-level", dest="log_level")
    return ap


def _load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"--config: cannot read {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"--config: {path}: {exc}") from exc
    flat = {}
    for key, val in raw.items():
        items = val.items() if isinstance(val, dict) else [(key, val)]
        for k, v in items:
            k = k.replace("-", "_")
            if k not in DEFAULTS:
                raise ConfigError(f"--config: unknown key '{k}' in {path}")
            flat[k] = v
    return flat


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file, environment and flags (flags win)."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_load_config(args.config))
    env_out = os.environ.get(OUTPUT_ENV)
    if env_out:
        cfg["out"] = env_out
    for k, v in vars(args).items():
        if v is not None and k in DEFAULTS:
            cfg[k] = v
    return cfg


def _cell(cfg, required=False) -> params.CellParameters:
    src = cfg["params"]
    if src is None:
        if required:
            raise ConfigError("missing --params (cell parameter file or 'default')")
        return params.default()
    if src == "default":
        return params.default()
    if not Path(src).is_file():
        raise ConfigError(f"--params: file not found: {src}")
    try:
        return params.load(src)
    except (ValueError, KeyError, TypeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"--params: {src}: {exc}") from exc


def _market(cfg) -> market.MarketData:
    fr, pr = cfg["fr"], cfg["prices"]
    try:
        if fr and pr:
            return market.load(fr, pr)
        if fr or pr:
            raise ConfigError("--fr and --prices must be given together")
        return market.synthetic(int(cfg["seed"]), int(cfg["synthetic_hours"]), int(cfg["steps"]))
    except FileNotFoundError as exc:
        raise ConfigError(f"market data: file not found: {exc.filename}") from exc
    except market.MarketDataError as exc:
        raise ConfigError(f"market data: {exc}") from exc


def _fr_only(cfg) -> np.ndarray:
    if cfg["fr"]:
        try:
            return market.load_fr_signal(cfg["fr"])
        except FileNotFoundError as exc:
            raise ConfigError(f"--fr: file not found: {exc.filename}") from exc
        except market.MarketDataError as exc:
            raise ConfigError(f"--fr: {exc}") from exc
    return market.synth_fr(int(cfg["seed"]), int(cfg["hours"]), int(cfg["steps"]))


def _outdir(cfg, names) -> Path:
    out = Path(cfg["out"])
    clash = [n for n in names if (out / n).exists()]
    if clash and not cfg["force"]:
        raise ConfigError(f"{out / clash[0]} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _strategy_config(cfg) -> strategies.StrategyConfig:
    try:
        o = ocp.OcpConfig.from_percent_units(
            cfg["fade_penalty"], cfg["fade_rate"], N=int(cfg["horizon"]), S_ocp=int(cfg["s_ocp"]),
            p_max=float(cfg["p_max"]), p_min=float(cfg["p_max"]),
            tau_l=cfg["tau_l"], tau_u=cfg["tau_u"], eta_l=cfg["eta_l"], eta_u=cfg["eta_u"],
        )
        return strategies.StrategyConfig(kind=strategies.Kind(cfg["strategy"]), F_fixed=float(cfg["band"]),
                                         dF=float(cfg["dF"]), ocp=o)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _run_config(cfg) -> closed_loop.RunConfig:
    try:
        return closed_loop.RunConfig(Y=int(cfg["hours"]), eol=float(cfg["eol"]), soc0=float(cfg["soc0"]),
                                     strategy=_strategy_config(cfg), backend=cfg["backend"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _num(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return repr(v)
    return str(v)


TRACE_COLUMNS = ("t", "P", "E", "V", "C_r", "C_f", "delta_f")


def _trace_rows(tr: plant.HourTrace, t0: float, hour: int | None = None):
    for s in range(tr.completed):
        row = [] if hour is None else [hour, s + 1]
        row += [t0 + (s + 1) * tr.dt, tr.power[s], tr.energy[s], tr.voltage[s],
                tr.fade_rate[s], tr.fade[s], tr.film[s]]
        yield [_num(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row]


def cmd_simulate(args) -> int:
    cfg = resolve(args)
    p = _cell(cfg, required=True)
    hours = int(cfg["hours"])
    if hours < 1:
        raise ConfigError("--hours must be at least 1")
    alpha = _fr_only(cfg)
    try:
        c = plant.HourlyCommitment(float(cfg["band"]), float(cfg["order"]), float(cfg["load"]))
        sim = plant.SimConfig(steps=alpha.shape[1], tau_l=cfg["tau_l"], tau_u=cfg["tau_u"],
                              p_max=float(cfg["p_max"]), backend=cfg["backend"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if c.F > sim.p_max:
        raise ConfigError(f"--band {c.F} exceeds the {sim.p_max} MW rating")
    out = _outdir(cfg, ["trace.csv"])
    x = CellState.at_soc(p, float(cfg["soc0"]))
    x_start = x
    rows = []
    status = 0
    done_hours = 0
    for h in range(hours):
        tr = plant.simulate_hour(x, c, alpha[h % alpha.shape[0]], sim, p)
        rows.extend(_trace_rows(tr, h * 3600.0))
        x = tr.end
        done_hours += 1
        if not tr.feasible:
            v = tr.verdict
            print(f"infeasible hour {h + 1}: {v.violation.value} at step {v.step + 1}"
                  + (f" ({v.cause})" if v.cause else ""), file=sys.stderr)
            status = EXIT_INFEASIBLE
            break
    with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(rows)
    P = np.array([float(r[1]) for r in rows])
    Cr = np.array([float(r[4]) for r in rows])
    print(f"steps={len(rows)} hours={done_hours} net_energy_mwh={_num(float(P.sum() * sim.dt / 3600.0))}"
          f" fade_increment={_num(float(Cr.sum() * sim.dt))} final_fade={_num(x.fade)}"
          f" final_energy_mwh={_num(x.energy(p))} final_film_m={_num(x.delta_f)}"
          f" start_energy_mwh={_num(x_start.energy(p))}")
    return status


def _grid(text) -> list:
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--grid: {exc}") from exc
    if not vals:
        raise ConfigError("--grid is empty")
    return sorted(set(vals))


def _band_tag(F: float) -> str:
    return f"{F:g}".replace(".", "p")


def cmd_sweep(args) -> int:
    cfg = resolve(args)
    grid = _grid(cfg["grid"])
    p = _cell(cfg)
    data = _market(cfg)
    rc = _run_config(cfg)
    for F in grid:
        if not 0 <= F <= rc.strategy.ocp.p_max:
            raise ConfigError(f"--grid value {F} outside [0, {rc.strategy.ocp.p_max}]")
    names = [f"summary_F{_band_tag(F)}.json" for F in grid] + ["sweep.csv"]
    out = _outdir(cfg, names)
    res = strategies.band_sweep(grid, data, rc, p, workers=int(cfg["workers"]))
    rows = res.rows
    for r in rows:
        r.ledger.write_summary(out / f"summary_F{_band_tag(r.F)}.json")
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("F", "revenue", "cost", "profit", "fade", "revenue_per_fade", "lifetime_days", "hours"))
        for r in rows:
            w.writerow([_num(r.F), _num(r.revenue), _num(r.cost), _num(r.profit), _num(r.fade),
                        _num(r.revenue_per_fade), _num(r.lifetime_days), r.hours])
    print(f"best_profit_F={_num(res.best_profit.F)} best_revenue_per_fade_F={_num(res.best_ratio.F)}")
    return 0


def cmd_run(args) -> int:
    cfg = resolve(args)
    p = _cell(cfg)
    data = _market(cfg)
    rc = _run_config(cfg)
    names = ["ledger.csv", "summary.json"] + (["states.csv"] if cfg["trace"] else [])
    out = _outdir(cfg, names)
    states = []
    hook = None
    if cfg["trace"]:
        def hook(row, trace):
            states.extend(_trace_rows(trace, (row.hour - 1) * 3600.0, row.hour))
    try:
        led = closed_loop.run(rc, data, p, on_hour=hook)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    led.to_csv(out / "ledger.csv", timings=bool(cfg["timings"]))
    led.write_summary(out / "summary.json")
    if cfg["trace"]:
        with open(out / "states.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("hour", "step") + TRACE_COLUMNS)
            w.writerows(states)
    s = led.summary()
    print(" ".join(f"{k}={_num(s[k])}" for k in ("strategy", "hours", "lifetime_days", "revenue", "cost",
                                                  "profit", "cumulative_fr_band_mw", "purchased_mwh",
                                                  "final_fade", "flagged_hours")))
    return 0


def _report_row(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            s = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg})") from exc
    keys = ("lifetime_days", "revenue", "cost", "profit", "cumulative_fr_band_mw", "purchased_mwh")
    if not isinstance(s, dict) or any(k not in s for k in keys):
        raise ConfigError(f"{path}: not a run summary (needs {', '.join(keys)})")
    for k in keys[1:]:
        if not isinstance(s[k], (int, float)) or isinstance(s[k], bool) or not math.isfinite(s[k]):
            raise ConfigError(f"{path}: '{k}' must be a finite number")
    h = s.get("horizon_hours")
    horizon = "-" if h is None else f"{h} h"
    life = s["lifetime_days"]
    life = f">{s.get('hours', 0) // 24} d" if life is None else f"{life} d"
    return [horizon, life] + [_num(float(s[k])) for k in keys[1:]]


def cmd_report(args) -> int:
    cfg = resolve(args)
    rows = [_report_row(p) for p in args.summaries]
    if args.csv:
        path = Path(args.csv)
        if path.exists() and not cfg["force"]:
            raise ConfigError(f"{path} exists; pass --force to overwrite")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            w.writerows(rows)
    widths = [max(len(c), *(len(r[i]) for r in rows)) for i, c in enumerate(REPORT_COLUMNS)]
    line = lambda cells: " | ".join(c.ljust(wd) for c, wd in zip(cells, widths)).rstrip()
    print(line(REPORT_COLUMNS))
    print("-+-".join("-" * wd for wd in widths))
    for r in rows:
        print(line(r))
    return 0


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "run": cmd_run, "report": cmd_report}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    level = (args.log_level or "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"battmpc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
