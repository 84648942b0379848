import dataclasses

import numpy as np
import pytest

from battmpc import plant
from battmpc.cell import CellState
from battmpc.plant import REST, HourlyCommitment, SimConfig, Verdict, Violation, check_feasibility, simulate_hour

from conftest import hour_of


def test_rest_hour_keeps_energy(inert):
    x = CellState.half_charged(inert)
    tr = simulate_hour(x, REST, hour_of(0.0), SimConfig(), inert)
    assert tr.feasible
    assert np.all(tr.energy == 0.5)
    assert tr.end == x


def test_power_identity(cell, day):
    c = HourlyCommitment(3.0, 0.4, 0.1)
    alpha = day.alpha[5]
    tr = simulate_hour(CellState.half_charged(cell), c, alpha, SimConfig(), cell)
    assert np.array_equal(tr.power, alpha * 3.0 + 0.4 - 0.1)
    assert abs(tr.net_energy - (alpha.mean() * 3.0 + 0.4 - 0.1)) <= 1e-12


def test_overcharge_crossing(inert):
    # constant 0.45 MW purchase from 50 %: E crosses 0.9 after roughly 0.4 / 0.45 h
    cfg = SimConfig()
    tr = simulate_hour(CellState.half_charged(inert), HourlyCommitment(0.0, 0.45, 0.0), hour_of(0.0), cfg, inert)
    assert tr.verdict.violation is Violation.OVERCHARGE
    k = tr.verdict.step
    bound = cfg.tau_u * inert.energy
    assert tr.energy[k] > bound >= tr.energy[k - 1]
    ramp = (bound - 0.5) / (0.45 * cfg.dt / 3600.0)
    assert abs(k + 1 - ramp) <= 0.1 * ramp


def test_no_silent_clamping(inert):
    tr = simulate_hour(CellState.half_charged(inert), HourlyCommitment(0.0, 0.45, 0.0), hour_of(0.0),
                       SimConfig(), inert)
    # the trajectory keeps integrating past the bound
    assert tr.completed == 1800
    assert tr.energy[-1] > 0.9


def test_stop_on_violation(inert):
    cfg = SimConfig(stop_on_violation=True)
    tr = simulate_hour(CellState.half_charged(inert), HourlyCommitment(0.0, 3.0, 0.0), hour_of(0.0), cfg, inert)
    assert tr.verdict.violation is Violation.OVERCHARGE
    assert tr.completed == tr.verdict.step + 1
    assert np.isnan(tr.energy[-1])


def test_overdischarge(inert):
    tr = simulate_hour(CellState.half_charged(inert), HourlyCommitment(0.0, 0.0, 5.0), hour_of(0.0),
                       SimConfig(), inert)
    # the cell empties soon after the bound is crossed; the earlier event wins
    assert tr.verdict.violation is Violation.OVERDISCHARGE
    assert tr.verdict.step < tr.completed < 1800


def test_model_failure_is_reported(cell):
    cfg = SimConfig(tau_u=1.0)
    tr = simulate_hour(CellState.at_soc(cell, 0.97), HourlyCommitment(0.0, 10.0, 0.0), hour_of(0.0), cfg, cell)
    assert tr.verdict.violation is Violation.SOLVER_FAILURE
    assert tr.verdict.cause
    assert not tr.feasible


def test_verdict_recomputed_from_trace(cell, day):
    tr = simulate_hour(CellState.half_charged(cell), HourlyCommitment(10.0, 0.0, 0.0), day.alpha[3],
                       SimConfig(), cell)
    assert check_feasibility(tr) == tr.verdict


def test_bounds_are_closed(inert):
    tr = simulate_hour(CellState.half_charged(inert), REST, hour_of(0.0), SimConfig(), inert)
    E = tr.energy.copy()
    E[100] = tr.tau_u * tr.e_max
    E[200] = tr.tau_l * tr.e_max
    assert check_feasibility(dataclasses.replace(tr, energy=E)).feasible


def test_constructed_violation_index(inert):
    tr = simulate_hour(CellState.half_charged(inert), REST, hour_of(0.0), SimConfig(), inert)
    E = tr.energy.copy()
    E[777] = 0.95
    E[900] = 0.01
    assert check_feasibility(dataclasses.replace(tr, energy=E)) == Verdict(Violation.OVERCHARGE, 777)
    E[777] = 0.5
    assert check_feasibility(dataclasses.replace(tr, energy=E)) == Verdict(Violation.OVERDISCHARGE, 900)


def test_bound_uses_start_of_step_fade(inert):
    x = CellState.at_soc(inert, 0.5, fade=0.1)
    tr = simulate_hour(x, REST, hour_of(0.0), SimConfig(), inert)
    E = tr.energy.copy()
    E[10] = 0.9 * 0.9 + 1e-12
    assert check_feasibility(dataclasses.replace(tr, energy=E)).violation is Violation.OVERCHARGE


def test_fade_grows_over_feasible_hour(cell, day):
    x = CellState.half_charged(cell)
    tr = simulate_hour(x, HourlyCommitment(2.0), day.alpha[0], SimConfig(), cell)
    assert tr.feasible
    assert tr.end.fade > x.fade
    assert np.all(np.diff(tr.fade) > 0)
    assert np.all(np.diff(tr.film) > 0)


def test_fade_equals_rate_sum(cell, day):
    x = CellState.half_charged(cell)
    tr = simulate_hour(x, HourlyCommitment(4.0), day.alpha[1], SimConfig(), cell)
    assert abs((tr.end.fade - x.fade) - np.sum(tr.fade_rate) * tr.dt) <= 1e-12


def test_deterministic(cell, day):
    x = CellState.half_charged(cell)
    a = simulate_hour(x, HourlyCommitment(6.0, 0.1), day.alpha[2], SimConfig(), cell)
    b = simulate_hour(x, HourlyCommitment(6.0, 0.1), day.alpha[2], SimConfig(), cell)
    assert np.array_equal(a.raw, b.raw, equal_nan=True)
    assert a.end == b.end


def test_coarse_plant_resolution(cell):
    tr = simulate_hour(CellState.half_charged(cell), HourlyCommitment(1.0), np.zeros(60), SimConfig(steps=60), cell)
    assert tr.steps == 60 and tr.dt == 60.0


def test_input_validation(cell):
    x = CellState.half_charged(cell)
    with pytest.raises(ValueError, match="1800"):
        simulate_hour(x, REST, np.zeros(10), SimConfig(), cell)
    with pytest.raises(ValueError, match=r"\[-1, 1\]"):
        simulate_hour(x, HourlyCommitment(1.0), hour_of(1.5), SimConfig(), cell)
    with pytest.raises(ValueError, match="rating"):
        simulate_hour(x, HourlyCommitment(11.0), hour_of(0.0), SimConfig(), cell)
    with pytest.raises(ValueError):
        HourlyCommitment(-1.0)
    with pytest.raises(ValueError):
        SimConfig(tau_l=0.9, tau_u=0.1)


def test_energy_aggregates(cell, day):
    c = HourlyCommitment(2.0, 0.3, 0.0)
    tr = simulate_hour(CellState.half_charged(cell), c, day.alpha[4], SimConfig(), cell)
    assert tr.purchased_energy == 0.3
    assert tr.fr_energy == pytest.approx(2.0 * day.alpha[4].mean(), abs=1e-12)
    assert plant.REST.power(np.ones(3)).tolist() == [0.0, 0.0, 0.0]
