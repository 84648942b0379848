"""Frequency-regulation signal and price series: loading, windowing, synthesis.

File formats (UTF-8, header row required, 1-based hour indices):

``fr_signal.csv``
    ``hour,step,alpha`` with steps 1..S contiguous inside every hour.
``prices.csv``
    ``hour,fr_price,energy_price``; FR capacity prices in $/MW must be
    nonnegative, energy prices in $/MWh may be negative.
"""

from __future__ import annotations

import contextlib
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MarketDataError(ValueError):
    pass


class ParseError(MarketDataError):
    pass


class RangeError(MarketDataError):
    pass


class GapError(MarketDataError):
    pass


class AlignmentError(MarketDataError):
    pass


@dataclass(frozen=True)
class MarketData:
    """Hour-aligned FR signal and prices.

    ``alpha`` has shape ``(Y, S)``; ``fr_price`` and ``energy_price`` have
    length ``Y``.
    """

    alpha: np.ndarray
    fr_price: np.ndarray
    energy_price: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        fr = np.asarray(self.fr_price, dtype=float)
        en = np.asarray(self.energy_price, dtype=float)
        if alpha.ndim != 2:
            raise AlignmentError("alpha must be a (hours, steps) array")
        if not (alpha.shape[0] == fr.shape[0] == en.shape[0]):
            raise AlignmentError(
                f"hour counts differ: signal {alpha.shape[0]}, prices {fr.shape[0]}/{en.shape[0]}"
            )
        if np.any(np.abs(alpha) > 1.0) or not np.all(np.isfinite(alpha)):
            raise RangeError("FR signal values must lie in [-1, 1]")
        if np.any(fr < 0) or not np.all(np.isfinite(fr)):
            raise RangeError("FR capacity prices must be nonnegative")
        for name, arr in (("alpha", alpha), ("fr_price", fr), ("energy_price", en)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def hours(self) -> int:
        return self.alpha.shape[0]

    @property
    def steps(self) -> int:
        return self.alpha.shape[1]


def _read_rows(source, columns):
    # accepts a path or an open text stream
    if hasattr(source, "read"):
        path, fh = getattr(source, "name", "<stream>"), contextlib.nullcontext(source)
    else:
        path = Path(source)
        try:
            fh = open(path, newline="", encoding="utf-8")
        except OSError as exc:
            raise ParseError(f"{path}: {exc.strerror}") from None
    with fh as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header != list(columns):
            raise ParseError(f"{path}: expected header {','.join(columns)}, got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                raise ParseError(f"{path}:{lineno}: expected {len(columns)} fields")
            rows.append((lineno, row))
    return rows


def load_fr_signal(source) -> np.ndarray:
    """Read ``fr_signal.csv`` into an ``(hours, S)`` array."""
    rows = _read_rows(source, ("hour", "step", "alpha"))
    if not rows:
        raise ParseError(f"{source}: no data rows")
    hours: dict[int, dict[int, float]] = {}
    for lineno, (h, s, a) in rows:
        try:
            hour, step, alpha = int(h), int(s), float(a)
        except ValueError:
            raise ParseError(f"{source}:{lineno}: cannot parse {h!r},{s!r},{a!r}") from None
        if not -1.0 <= alpha <= 1.0:
            raise RangeError(f"{source}:{lineno}: alpha={alpha} outside [-1, 1] (hour {hour}, step {step})")
        steps = hours.setdefault(hour, {})
        if step in steps:
            raise ParseError(f"{source}:{lineno}: duplicate hour {hour} step {step}")
        steps[step] = alpha
    order = sorted(hours)
    if order != list(range(1, len(order) + 1)):
        missing = sorted(set(range(1, order[-1] + 1)) - set(order))
        raise GapError(f"{source}: missing hour {missing[0] if missing else order[0]}")
    S = max(len(v) for v in hours.values())
    out = np.empty((len(order), S))
    for hour in order:
        steps = hours[hour]
        for step in range(1, S + 1):
            if step not in steps:
                raise GapError(f"{source}: hour {hour} is missing step {step}")
        if len(steps) != S:
            extra = sorted(set(steps) - set(range(1, S + 1)))
            raise GapError(f"{source}: hour {hour} has out-of-range step {extra[0]}")
        out[hour - 1] = [steps[s] for s in range(1, S + 1)]
    return out


def load_prices(source) -> tuple[np.ndarray, np.ndarray]:
    """Read ``prices.csv``; returns ``(fr_price, energy_price)``."""
    rows = _read_rows(source, ("hour", "fr_price", "energy_price"))
    if not rows:
        raise ParseError(f"{source}: no data rows")
    table: dict[int, tuple[float, float]] = {}
    for lineno, (h, f, e) in rows:
        try:
            hour, fr, en = int(h), float(f), float(e)
        except ValueError:
            raise ParseError(f"{source}:{lineno}: cannot parse {h!r},{f!r},{e!r}") from None
        if not (math.isfinite(fr) and math.isfinite(en)):
            raise ParseError(f"{source}:{lineno}: non-finite price")
        if fr < 0:
            raise RangeError(f"{source}:{lineno}: negative FR capacity price {fr} at hour {hour}")
        if hour in table:
            raise AlignmentError(f"{source}:{lineno}: duplicate hour {hour}")
        table[hour] = (fr, en)
    order = sorted(table)
    if order != list(range(1, len(order) + 1)):
        raise AlignmentError(f"{source}: hours must run 1..{len(order)} without gaps")
    fr = np.array([table[h][0] for h in order])
    en = np.array([table[h][1] for h in order])
    return fr, en


def load(fr_path, price_path) -> MarketData:
    alpha = load_fr_signal(fr_path)
    fr, en = load_prices(price_path)
    if len(fr) != alpha.shape[0]:
        raise AlignmentError(
            f"signal covers {alpha.shape[0]} hours but prices cover {len(fr)}"
        )
    return MarketData(alpha, fr, en)


def write_fr_signal(path, alpha) -> None:
    alpha = np.asarray(alpha, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("hour", "step", "alpha"))
        for h, row in enumerate(alpha, start=1):
            for s, a in enumerate(row, start=1):
                w.writerow((h, s, repr(float(a))))


def write_prices(path, fr_price, energy_price) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("hour", "fr_price", "energy_price"))
        for h, (f, e) in enumerate(zip(fr_price, energy_price), start=1):
            w.writerow((h, repr(float(f)), repr(float(e))))


def save(data: MarketData, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fr_path, price_path = directory / "fr_signal.csv", directory / "prices.csv"
    write_fr_signal(fr_path, data.alpha)
    write_prices(price_path, data.fr_price, data.energy_price)
    return fr_path, price_path


def hour_indices(Y: int, t: int, N: int) -> np.ndarray:
    """0-based row indices of hours t+1..t+N, wrapping past the end."""
    if N < 1:
        raise ValueError("horizon must be at least one hour")
    return (t + np.arange(N)) % Y


def window(data: MarketData, t: int, N: int):
    """Horizon slice ``(alpha, fr_price, energy_price)`` for hours t+1..t+N.

    ``t`` counts completed hours (t = 0 selects hour 1). Data are replicated
    past the last loaded hour.
    """
    idx = hour_indices(data.hours, t, N)
    return data.alpha[idx], data.fr_price[idx], data.energy_price[idx]


def synth_fr(seed: int, hours: int, S: int = 1800) -> np.ndarray:
    """Seeded regulation-like signal of shape ``(hours, S)`` in [-1, 1].

    A mean-reverting walk whose running integral is fed back (so the
    delivered energy stays bounded), plus sparse decaying jumps that drive
    the signal into saturation. Each hour is finally re-centred before
    clipping to keep hourly means near zero.
    """
    rng = np.random.default_rng(seed)
    dt = 3600.0 / S
    tau_w = 120.0
    omega = 2.0 * np.pi / 600.0
    sigma = 0.06
    jump_rate = 4.0 / 3600.0
    tau_j = 45.0
    noise = rng.standard_normal((hours, S))
    jump_u = rng.random((hours, S))
    jump_size = rng.uniform(0.6, 1.2, (hours, S)) * rng.choice((-1.0, 1.0), (hours, S))
    out = np.empty((hours, S))
    w = j = q = 0.0
    decay_j = math.exp(-dt / tau_j)
    p_jump = 1.0 - math.exp(-jump_rate * dt)
    kick = sigma * math.sqrt(dt)
    for h in range(hours):
        row = out[h]
        for s in range(S):
            w += dt * (-w / tau_w - omega * omega * q) + kick * noise[h, s]
            j *= decay_j
            if jump_u[h, s] < p_jump:
                j += jump_size[h, s]
            a = w + j
            row[s] = a
            q += min(1.0, max(-1.0, a)) * dt
        row -= row.mean()
        np.clip(row, -1.0, 1.0, out=row)
    return out


def synth_prices(seed: int, hours: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded hourly FR capacity ($/MW) and day-ahead energy ($/MWh) prices.

    Both follow a daily shape with multiplicative noise; FR prices are kept
    nonnegative, energy prices are shifted lognormal and may dip below zero
    only through the additive noise term.
    """
    rng = np.random.default_rng(seed)
    hod = np.arange(hours) % 24
    daily = 0.5 * (1 - np.cos(2 * np.pi * (hod - 3) / 24))
    fr = 18.0 + 22.0 * daily
    fr = fr * np.exp(rng.normal(0.0, 0.35, hours))
    energy = 22.0 + 18.0 * daily
    energy = energy * np.exp(rng.normal(0.0, 0.2, hours)) + rng.normal(0.0, 2.0, hours)
    return np.round(fr, 2), np.round(energy, 2)


def synthetic(seed: int, hours: int, S: int = 1800) -> MarketData:
    fr, en = synth_prices(seed + 1, hours)
    return MarketData(synth_fr(seed, hours, S), fr, en)
