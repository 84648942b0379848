"""Cell and pack parameters for the reduced single-particle model.

Parameter files are TOML with sections ``electrode.n``, ``electrode.p``,
``side_reaction`` and ``pack``. Per-cell areas, charge capacity and energy
are given in the file and multiplied by ``pack.n_cells`` on load. See
``data/default_cell.toml`` for the full schema with units.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FARADAY = 96487.0  # C/mol
GAS_CONSTANT = 8.314  # J/(mol K)


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class PhysicalConstants:
    F: float = FARADAY
    R: float = GAS_CONSTANT


@dataclass(frozen=True)
class Electrode:
    """One electrode of the single-particle model.

    ``area`` is the total electroactive area of the pack (m^2); the OCV
    table maps stoichiometry ``theta`` in [0, 1] to potential (V).
    """

    diffusivity: float  # m^2/s
    radius: float  # m
    rate_constant: float  # m^2.5 / (mol^0.5 s)
    max_concentration: float  # mol/m^3
    area: float  # m^2
    ocv_theta: tuple[float, ...]
    ocv_potential: tuple[float, ...]

    def __post_init__(self):
        for name in ("diffusivity", "radius", "rate_constant", "max_concentration", "area"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"electrode {name} must be positive")
        theta = np.asarray(self.ocv_theta, dtype=float)
        if len(theta) != len(self.ocv_potential) or len(theta) < 2:
            raise ParameterError("OCV table needs matching theta/potential arrays")
        if np.any(np.diff(theta) <= 0):
            raise ParameterError("OCV theta must be strictly increasing")
        if theta[0] > 0.0 or theta[-1] < 1.0:
            raise ParameterError("OCV table must cover theta in [0, 1]")

    @cached_property
    def ocv(self) -> PchipInterpolator:
        return PchipInterpolator(np.asarray(self.ocv_theta), np.asarray(self.ocv_potential))

    @property
    def charge_capacity(self) -> float:
        """Charge (A s) that moves the particle from empty to full."""
        return self.area * self.radius * FARADAY * self.max_concentration / 3.0


@dataclass(frozen=True)
class SideReaction:
    exchange_current_density: float  # A/m^2, zero disables fade
    reference_potential: float  # V
    molar_mass: float  # kg/mol
    density: float  # kg/m^3
    conductivity: float  # S/m
    initial_resistance: float  # Ohm m^2

    def __post_init__(self):
        if self.exchange_current_density < 0:
            raise ParameterError("side-reaction exchange current density must be >= 0")
        for name in ("molar_mass", "density", "conductivity", "initial_resistance"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"side reaction {name} must be positive")


@dataclass(frozen=True)
class CellParameters:
    """Pack-level parameter set.

    ``capacity`` (Q_max, A s), ``energy`` (E_max, MWh) and both electrode
    areas are pack totals, i.e. per-cell values times ``n_cells``.
    ``stoich_offset_p`` is the positive-electrode stoichiometry at an empty
    negative electrode; it fixes the lithium inventory of a fresh cell.
    """

    neg: Electrode
    pos: Electrode
    side: SideReaction
    electrolyte_concentration: float  # mol/m^3
    temperature: float  # K
    capacity: float  # A s
    energy: float  # MWh
    n_cells: float
    stoich_offset_p: float = 1.0
    constants: PhysicalConstants = PhysicalConstants()

    def __post_init__(self):
        for name in ("electrolyte_concentration", "temperature", "capacity", "energy", "n_cells"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")

    def scaled(self, n_cells: float) -> CellParameters:
        """Same cell chemistry in a pack of ``n_cells`` cells."""
        k = n_cells / self.n_cells
        return dataclasses.replace(
            self,
            neg=dataclasses.replace(self.neg, area=self.neg.area * k),
            pos=dataclasses.replace(self.pos, area=self.pos.area * k),
            capacity=self.capacity * k,
            energy=self.energy * k,
            n_cells=n_cells,
        )

    def without_fade(self) -> CellParameters:
        return dataclasses.replace(
            self, side=dataclasses.replace(self.side, exchange_current_density=0.0)
        )

    def with_side(self, **changes) -> CellParameters:
        return dataclasses.replace(self, side=dataclasses.replace(self.side, **changes))

    @property
    def nominal_current(self) -> float:
        """1C current of the pack (A)."""
        return self.capacity / 3600.0

    def theta_p_for(self, theta_n: float) -> float:
        """Positive stoichiometry matching ``theta_n`` for a fresh cell."""
        return self.stoich_offset_p - theta_n * self.neg.charge_capacity / self.pos.charge_capacity

    @cached_property
    def packed(self) -> np.ndarray:
        from battmpc import kernel

        return kernel.pack_parameters(self)


def _electrode(section, n_cells, where):
    try:
        return Electrode(
            diffusivity=float(section["diffusivity"]),
            radius=float(section["radius"]),
            rate_constant=float(section["rate_constant"]),
            max_concentration=float(section["max_concentration"]),
            area=float(section["area_per_cell"]) * n_cells,
            ocv_theta=tuple(float(v) for v in section["ocv_theta"]),
            ocv_potential=tuple(float(v) for v in section["ocv_potential"]),
        )
    except KeyError as exc:
        raise ParameterError(f"missing key {exc.args[0]!r} in [{where}]") from None


def from_dict(cfg: dict) -> CellParameters:
    try:
        pack = cfg["pack"]
        n_cells = float(pack["n_cells"])
        electrodes = cfg["electrode"]
        side = cfg["side_reaction"]
        cell = cfg.get("cell", {})
        return CellParameters(
            neg=_electrode(electrodes["n"], n_cells, "electrode.n"),
            pos=_electrode(electrodes["p"], n_cells, "electrode.p"),
            side=SideReaction(
                exchange_current_density=float(side["exchange_current_density"]),
                reference_potential=float(side["reference_potential"]),
                molar_mass=float(side["molar_mass"]),
                density=float(side["density"]),
                conductivity=float(side["conductivity"]),
                initial_resistance=float(side["initial_resistance"]),
            ),
            electrolyte_concentration=float(cell.get("electrolyte_concentration", 1200.0)),
            temperature=float(cell.get("temperature", 298.15)),
            capacity=float(pack["capacity_per_cell"]) * n_cells,
            energy=float(pack["energy_per_cell"]) * n_cells,
            n_cells=n_cells,
            stoich_offset_p=float(electrodes["p"].get("stoich_offset", 1.0)),
        )
    except KeyError as exc:
        raise ParameterError(f"missing parameter section or key {exc.args[0]!r}") from None


def load(path: str | Path) -> CellParameters:
    with open(path, "rb") as fh:
        try:
            cfg = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ParameterError(f"{path}: {exc}") from None
    return from_dict(cfg)


def default() -> CellParameters:
    """Representative LiFePO4/graphite pack scaled to 1 MWh."""
    text = resources.files("battmpc").joinpath("data/default_cell.toml").read_text()
    return from_dict(tomllib.loads(text))
