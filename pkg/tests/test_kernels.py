import os
import subprocess
import sys

import numpy as np
import pytest

from battmpc import kernel
from battmpc.cell import CellModelError, CellState, step
from battmpc.plant import HourlyCommitment, SimConfig, simulate_hour

needs_cython = pytest.mark.skipif("cython" not in kernel.available_backends(),
                                  reason="compiled kernel not built")

cm_errors = CellModelError

FIELDS = ("power", "energy", "voltage", "fade_rate", "fade", "film", "current")


def run_both(x, c, alpha, cell, **kw):
    out = {}
    for name in ("python", "cython"):
        out[name] = simulate_hour(x, c, alpha, SimConfig(steps=alpha.size, backend=name, **kw), cell)
    return out["python"], out["cython"]


@needs_cython
@pytest.mark.parametrize("seed", range(5))
def test_backends_bit_identical_on_random_hours(cell, seed):
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(-1, 1, 240)
    c = HourlyCommitment(rng.uniform(0, 6), rng.uniform(0, 0.3), rng.uniform(0, 0.3))
    x = CellState.at_soc(cell, rng.uniform(0.3, 0.7), fade=rng.uniform(0, 0.1))
    a, b = run_both(x, c, alpha, cell)
    for f in FIELDS:
        assert np.array_equal(getattr(a, f), getattr(b, f), equal_nan=True), f
    assert a.end == b.end and a.verdict == b.verdict


@needs_cython
def test_backends_agree_on_violation_and_failure(cell):
    x = CellState.at_soc(cell, 0.85)
    a, b = run_both(x, HourlyCommitment(0.0, 10.0, 0.0), np.zeros(60), cell)
    assert not a.feasible and a.verdict == b.verdict and a.completed == b.completed
    assert np.array_equal(a.energy, b.energy, equal_nan=True)


@needs_cython
def test_single_step_identical(cell):
    x = CellState.half_charged(cell)
    for P in (-8.0, -0.5, 0.0, 0.5, 8.0):
        ra = step(x, P, 2.0, cell, backend="python")
        rb = step(x, P, 2.0, cell, backend="cython")
        assert ra[0] == rb[0]
        assert ra[1] == rb[1]


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernel.get_backend("fortran")


@pytest.mark.skipif(os.environ.get("BATTMPC_PURE_PYTHON") == "1", reason="fallback forced")
def test_default_backend_is_compiled_when_available():
    expected = "cython" if "cython" in kernel.available_backends() else "python"
    assert kernel.BACKEND == expected


def test_environment_forces_pure_python():
    env = dict(os.environ, BATTMPC_PURE_PYTHON="1")
    res = subprocess.run([sys.executable, "-c", "from battmpc import kernel; print(kernel.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert res.stdout.strip() == "python"


@pytest.mark.parametrize("name", kernel.available_backends())
def test_impossible_power_raises_model_error(cell, name):
    # the side-current guess overflows here; both backends must fail cleanly
    x = CellState.at_soc(cell, 0.98)
    with pytest.raises(cm_errors) as info:
        step(x, 5000.0, 2.0, cell, backend=name)
    assert not isinstance(info.value, OverflowError)


@needs_cython
def test_backends_fail_the_same_way(cell):
    x = CellState.at_soc(cell, 0.98)
    seen = []
    for name in ("python", "cython"):
        try:
            step(x, 5000.0, 2.0, cell, backend=name)
        except cm_errors as exc:
            seen.append(type(exc))
    assert len(seen) == 2 and seen[0] is seen[1]
