import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp

from battmpc import solvers
from battmpc.solvers import IpmOptions, LpProblem, NlpProblem, Status, solve_lp, solve_nlp

INF = math.inf


def lp(cost, A, lo, hi, xl, xu):
    return LpProblem(np.asarray(cost, float), sp.csr_matrix(np.atleast_2d(np.asarray(A, float))),
                     np.asarray(lo, float), np.asarray(hi, float), np.asarray(xl, float), np.asarray(xu, float))


def test_max_x_on_unit_interval():
    r = solve_lp(LpProblem(np.array([-1.0]), sp.csr_matrix((0, 1)), np.zeros(0), np.zeros(0),
                           np.zeros(1), np.ones(1)))
    assert r.status is Status.OPTIMAL
    assert r.x[0] == pytest.approx(1.0, abs=1e-8)


def test_infeasible_row_and_bound():
    r = solve_lp(lp([1.0], [[1.0]], [-INF], [0.0], [1.0], [INF]))
    assert r.status is Status.INFEASIBLE


def test_inconsistent_bounds():
    r = solve_lp(lp([1.0], [[1.0]], [-INF], [INF], [1.0], [0.0]))
    assert r.status is Status.INFEASIBLE


def test_optimal_report_meets_tolerances():
    r = solve_lp(lp([-1.0, -2.0], [[1.0, 1.0], [1.0, -1.0]], [-INF, -1.0], [4.0, 1.0], [0, 0], [3, 3]))
    assert r.optimal
    assert r.primal_infeasibility <= 1e-8
    assert r.dual_infeasibility <= 1e-8
    assert r.duality_gap <= 1e-8 * (1 + abs(r.objective))
    assert r.objective == pytest.approx(-6.5, abs=1e-7)


def vertex_optimum(c, A, b, u):
    """Minimise c.x over {A x <= b, 0 <= x <= u} by enumerating basic solutions."""
    n = len(c)
    G = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([b, u, np.zeros(n)])
    best = INF
    for rows in itertools.combinations(range(len(h)), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = min(best, float(c @ x))
    return best


@pytest.mark.parametrize("seed", range(12))
def test_random_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    m = int(rng.integers(1, 5))
    c = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    # x = 0.5 u is strictly feasible by construction
    u = rng.uniform(0.5, 3.0, n)
    b = A @ (0.5 * u) + rng.uniform(0.1, 1.0, m)
    r = solve_lp(lp(c, A, np.full(m, -INF), b, np.zeros(n), u))
    assert r.optimal
    ref = vertex_optimum(c, A, b, u)
    assert r.objective == pytest.approx(ref, abs=1e-7 * (1 + abs(ref)))


def test_equality_lp():
    # min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0
    r = solve_lp(lp([1.0, 2.0], [[1.0, 1.0]], [1.0], [1.0], [0, 0], [INF, INF]))
    assert r.optimal
    assert r.x == pytest.approx([1.0, 0.0], abs=1e-8)
    assert r.y is not None


def quad(target=2.0):
    return NlpProblem(
        n=1, m=0, x_lower=np.zeros(1), x_upper=np.ones(1), c_lower=np.zeros(0), c_upper=np.zeros(0),
        x0=np.array([0.5]),
        objective=lambda x: float((x[0] - target) ** 2),
        gradient=lambda x: np.array([2 * (x[0] - target)]),
        constraints=lambda x: np.zeros(0),
        jacobian=lambda x: sp.csr_matrix((0, 1)),
        hessian=lambda x, y, f: sp.csr_matrix([[2.0 * f]]),
    )


def test_active_bound_multiplier():
    r = solve_nlp(quad())
    assert r.optimal
    assert r.x[0] == pytest.approx(1.0, abs=1e-6)
    # d/dx (x-2)^2 = -2 at x = 1 is balanced by the upper-bound multiplier
    assert r.z_upper[0] == pytest.approx(2.0, rel=1e-4)
    assert r.kkt_error <= 1e-6


def rosenbrock():
    def f(x):
        return 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2

    def g(x):
        return np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])

    def H(x, y, s):
        return sp.csr_matrix(s * np.array([[1200 * x[0] ** 2 - 400 * x[1] + 2, -400 * x[0]],
                                           [-400 * x[0], 200.0]]))

    return NlpProblem(2, 0, np.full(2, -INF), np.full(2, INF), np.zeros(0), np.zeros(0),
                      np.array([-1.2, 1.0]), f, g, lambda x: np.zeros(0),
                      lambda x: sp.csr_matrix((0, 2)), H), g


def test_rosenbrock():
    prob, grad = rosenbrock()
    r = solve_nlp(prob)
    assert r.optimal
    assert np.max(np.abs(r.x - 1.0)) <= 1e-6
    assert np.linalg.norm(grad(r.x)) <= 1e-6


def circle():
    # min x + y on the unit circle
    return NlpProblem(
        2, 1, np.full(2, -INF), np.full(2, INF), np.array([1.0]), np.array([1.0]), np.array([0.5, -0.3]),
        lambda x: float(x[0] + x[1]), lambda x: np.ones(2),
        lambda x: np.array([x @ x]), lambda x: sp.csr_matrix(2 * x.reshape(1, 2)),
        lambda x, y, s: sp.csr_matrix(2 * y[0] * np.eye(2)),
    )


def test_equality_constrained_nlp():
    r = solve_nlp(circle())
    assert r.optimal
    assert r.x == pytest.approx([-math.sqrt(0.5)] * 2, abs=1e-6)


def test_iteration_limit():
    prob, _ = rosenbrock()
    r = solve_nlp(prob, opts=IpmOptions(max_iter=3))
    assert r.status is Status.ITERATION_LIMIT
    assert r.iterations == 3


def test_deterministic():
    prob, _ = rosenbrock()
    a, b = solve_nlp(prob), solve_nlp(prob)
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


def test_warm_start_from_solution():
    prob, _ = rosenbrock()
    cold = solve_nlp(prob)
    warm = solve_nlp(prob, warm=cold.warm())
    assert warm.optimal
    assert warm.iterations <= cold.iterations
    assert warm.objective <= cold.objective + 1e-6 * (1 + abs(cold.objective))


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv(solvers.THREADS_ENV, "1")
    assert solve_nlp(circle()).optimal


def test_dump_format(tmp_path):
    p = lp([1.0, 0.0, -3.0], [[1.0, 2.0, 0.0], [0.0, 0.0, 4.0]], [-INF, 1.0], [5.0, 1.0], [0, 0, 0], [1, INF, 2])
    path = tmp_path / "lp.txt"
    solvers.dump(p, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "3 2"
    assert lines[1] == "# variable bounds"
    assert lines[2:5] == ["0.0 1.0", "0.0 inf", "0.0 2.0"]
    assert lines[5] == "# row bounds"
    assert lines[6:8] == ["-inf 5.0", "1.0 1.0"]
    assert lines[8] == "# gradient nnz 2"
    assert lines[9:11] == ["0 1.0", "2 -3.0"]
    assert lines[11] == "# jacobian nnz 3"
    trip = sorted(tuple(l.split()) for l in lines[12:])
    assert trip == [("0", "0", "1.0"), ("0", "1", "2.0"), ("1", "2", "4.0")]


def test_lp_shape_validation():
    with pytest.raises(ValueError):
        LpProblem(np.ones(2), sp.csr_matrix(np.ones((1, 3))), np.zeros(1), np.zeros(1), np.zeros(3), np.ones(3))
