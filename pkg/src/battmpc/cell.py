"""Reduced single-particle cell model with an SEI side reaction.

The radial diffusion in each electrode particle is replaced by the parabolic
profile approximation, which leaves one average concentration per electrode
plus the film thickness as differential states. Time stepping is fully
implicit backward Euler; see :func:`step`.

Sign conventions: ``I_app > 0`` charges the cell, ``J_sd <= 0`` always and
the fade rate ``C_r = |J_sd| S_n / Q_max`` is reported nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from battmpc import kernel
from battmpc.params import FARADAY, GAS_CONSTANT, CellParameters


class CellModelError(RuntimeError):
    pass


class NonConvergence(CellModelError):
    pass


class DomainViolation(CellModelError, ValueError):
    pass


@dataclass(frozen=True)
class CellState:
    c_avg_n: float  # mol/m^3
    c_avg_p: float  # mol/m^3
    delta_f: float = 0.0  # m
    fade: float = 0.0  # cumulative capacity fade C_f, fraction

    @classmethod
    def at_soc(cls, p: CellParameters, soc: float, delta_f=0.0, fade=0.0) -> CellState:
        """Fresh-cell state with ``c_avg_n = soc * c_n_max``."""
        return cls(
            c_avg_n=soc * p.neg.max_concentration,
            c_avg_p=p.theta_p_for(soc) * p.pos.max_concentration,
            delta_f=delta_f,
            fade=fade,
        )

    @classmethod
    def half_charged(cls, p: CellParameters) -> CellState:
        return cls.at_soc(p, 0.5)

    def as_tuple(self):
        return (self.c_avg_n, self.c_avg_p, self.delta_f, self.fade)

    def energy(self, p: CellParameters) -> float:
        return self.c_avg_n / p.neg.max_concentration * p.energy

    def check(self, p: CellParameters) -> None:
        if not 0.0 <= self.c_avg_n <= p.neg.max_concentration:
            raise DomainViolation(f"c_avg_n={self.c_avg_n} outside [0, c_n_max]")
        if not 0.0 <= self.c_avg_p <= p.pos.max_concentration:
            raise DomainViolation(f"c_avg_p={self.c_avg_p} outside [0, c_p_max]")
        if self.delta_f < 0.0 or not 0.0 <= self.fade <= 1.0:
            raise DomainViolation("film thickness and fade must be nonnegative, fade <= 1")


@dataclass(frozen=True)
class AlgebraicState:
    c_s_n: float
    c_s_p: float
    phi_n: float
    phi_p: float
    eta_n: float
    eta_p: float
    eta_sd: float
    J_n: float
    J_p: float
    J_sd: float
    I_app: float
    V: float
    R_f: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])


def exchange_current_density(c_s, c_max, c_e, k, F=FARADAY):
    """``F k sqrt((c_max - c_s) c_s c_e)`` in A/m^2."""
    if not 0.0 <= c_s <= c_max:
        raise DomainViolation(f"surface concentration {c_s} outside [0, {c_max}]")
    if not c_e > 0:
        raise DomainViolation("electrolyte concentration must be positive")
    return F * k * math.sqrt(c_max - c_s) * math.sqrt(c_s) * math.sqrt(c_e)


def bv_current(i0, eta, T, F=FARADAY, R=GAS_CONSTANT):
    """Symmetric Butler-Volmer current density (A/m^2)."""
    return 2.0 * i0 * math.sinh(0.5 * F * eta / (R * T))


def film_resistance(delta_f, p: CellParameters) -> float:
    return p.side.initial_resistance + delta_f / p.side.conductivity


def side_reaction_current(phi_n, I_app, delta_f, p: CellParameters) -> float:
    """Irreversible solvent-reduction current density, always <= 0."""
    if delta_f < 0:
        raise DomainViolation("film thickness must be nonnegative")
    c = p.constants
    eta_sd = phi_n - p.side.reference_potential + film_resistance(delta_f, p) * I_app / p.neg.area
    return -p.side.exchange_current_density * math.exp(-c.F * eta_sd / (c.R * p.temperature))


def _ocv(e, theta):
    return float(e.ocv(theta))


def algebraic_residual(x: CellState, a: AlgebraicState, P: float, p: CellParameters) -> np.ndarray:
    """Stacked residuals of the 13 algebraic relations at ``(x, a, P)``.

    Entries are in their natural units (mol/m^3, A/m^2, V, MW, Ohm m^2).
    """
    c = p.constants
    n, q = p.neg, p.pos
    T = p.temperature
    R_f = film_resistance(x.delta_f, p)
    i0n = exchange_current_density(a.c_s_n, n.max_concentration, p.electrolyte_concentration, n.rate_constant, c.F)
    i0p = exchange_current_density(a.c_s_p, q.max_concentration, p.electrolyte_concentration, q.rate_constant, c.F)
    return np.array([
        a.c_s_n - (x.c_avg_n - a.J_n * n.radius / (5.0 * n.diffusivity * c.F)),
        a.c_s_p - (x.c_avg_p - a.J_p * q.radius / (5.0 * q.diffusivity * c.F)),
        a.J_n - bv_current(i0n, a.eta_n, T, c.F, c.R),
        a.J_p - bv_current(i0p, a.eta_p, T, c.F, c.R),
        a.eta_n - (a.phi_n - _ocv(n, a.c_s_n / n.max_concentration) + a.R_f * a.I_app / n.area),
        a.eta_p - (a.phi_p - _ocv(q, a.c_s_p / q.max_concentration)),
        a.eta_sd - (a.phi_n - p.side.reference_potential + a.R_f * a.I_app / n.area),
        a.J_sd + p.side.exchange_current_density * math.exp(-c.F * a.eta_sd / (c.R * T)),
        a.J_p - a.I_app / q.area,
        a.J_n + a.J_sd + a.I_app / n.area,
        a.V - (a.phi_p - a.phi_n),
        P - a.I_app * a.V / 1e6,
        a.R_f - R_f,
    ])


def reconstruct(x: CellState, I_app: float, J_sd: float, p: CellParameters) -> AlgebraicState:
    """Algebraic point implied by the end-of-step state, current and J_sd."""
    c = p.constants
    n, q = p.neg, p.pos
    f = c.F / (c.R * p.temperature)
    J_p = I_app / q.area
    J_n = -I_app / n.area - J_sd
    c_s_n = x.c_avg_n - J_n * n.radius / (5.0 * n.diffusivity * c.F)
    c_s_p = x.c_avg_p - J_p * q.radius / (5.0 * q.diffusivity * c.F)
    i0n = exchange_current_density(c_s_n, n.max_concentration, p.electrolyte_concentration, n.rate_constant, c.F)
    i0p = exchange_current_density(c_s_p, q.max_concentration, p.electrolyte_concentration, q.rate_constant, c.F)
    eta_n = 2.0 / f * math.asinh(J_n / (2.0 * i0n))
    eta_p = 2.0 / f * math.asinh(J_p / (2.0 * i0p))
    R_f = film_resistance(x.delta_f, p)
    phi_p = _ocv(q, c_s_p / q.max_concentration) + eta_p
    phi_n = _ocv(n, c_s_n / n.max_concentration) + eta_n - R_f * I_app / n.area
    eta_sd = phi_n - p.side.reference_potential + R_f * I_app / n.area
    return AlgebraicState(
        c_s_n=c_s_n, c_s_p=c_s_p, phi_n=phi_n, phi_p=phi_p, eta_n=eta_n, eta_p=eta_p,
        eta_sd=eta_sd, J_n=J_n, J_p=J_p, J_sd=J_sd, I_app=I_app, V=phi_p - phi_n, R_f=R_f,
    )


def rest_point(x: CellState, p: CellParameters) -> AlgebraicState:
    """Open-circuit guess: zero current, side reaction at its rest value."""
    return reconstruct(x, 0.0, 0.0, p)


def step(x: CellState, P: float, dt: float, p: CellParameters,
         guess: AlgebraicState | None = None, *, backend=None,
         tol=1e-10, maxit=50) -> tuple[CellState, AlgebraicState]:
    """One implicit backward-Euler step at constant power ``P`` (MW).

    Solves the reduced two-unknown Newton system in the kernel, falling back
    to bisection on the current if Newton stalls. Raises
    :class:`NonConvergence` or :class:`DomainViolation`.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    mod = kernel.get_backend(backend)
    ocv_n, ocv_p = kernel.ocv_tables(p, backend)
    g = (guess.I_app, guess.J_sd) if guess is not None else (0.0, 0.0)
    out = np.zeros((1, kernel.N_COLS))
    status, done, state, g_new, _, _ = mod.simulate_steps(
        x.as_tuple(), np.array([float(P)]), float(dt), p.packed, ocv_n, ocv_p, g,
        -np.inf, np.inf, False, out, tol, maxit,
    )
    if status == kernel.NONCONVERGENCE:
        raise NonConvergence(f"Newton failed at P={P} MW")
    if status == kernel.DOMAIN:
        raise DomainViolation(f"concentration left its bounds at P={P} MW")
    new = CellState(*state)
    return new, reconstruct(new, g_new[0], g_new[1], p)


def outputs(x: CellState, a: AlgebraicState, p: CellParameters) -> tuple[float, float, float]:
    """``(E [MWh], V [V], C_r [1/s])`` at a consistent point."""
    E = x.c_avg_n / p.neg.max_concentration * p.energy
    C_r = abs(a.J_sd) * p.neg.area / p.capacity
    return E, a.phi_p - a.phi_n, C_r


def lithium_inventory(x: CellState, p: CellParameters) -> float:
    """Moles of cyclable lithium in both particles (area * radius / 3 volumes)."""
    return (x.c_avg_n * p.neg.area * p.neg.radius / 3.0
            + x.c_avg_p * p.pos.area * p.pos.radius / 3.0)
