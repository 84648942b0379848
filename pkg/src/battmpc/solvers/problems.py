"""Problem containers consumed by the interior-point engine.

Both forms are minimisations with two-sided row bounds
``c_lower <= c(x) <= c_upper`` (equal bounds give equalities) and variable
bounds ``x_lower <= x <= x_upper`` (``+-inf`` for none).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp


@dataclass
class NlpProblem:
    n: int
    m: int
    x_lower: np.ndarray
    x_upper: np.ndarray
    c_lower: np.ndarray
    c_upper: np.ndarray
    x0: np.ndarray
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    constraints: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], sp.spmatrix]
    # hessian(x, y, obj_factor) -> symmetric sparse Hessian of the Lagrangian
    hessian: Callable[[np.ndarray, np.ndarray, float], sp.spmatrix] | None = None
    index: dict = field(default_factory=dict)
    objective_scale: float = 1.0  # reported objective = objective(x) * scale
    meta: dict = field(default_factory=dict)

    @property
    def is_linear(self) -> bool:
        return self.hessian is None


@dataclass
class LpProblem:
    cost: np.ndarray
    A: sp.csr_matrix
    row_lower: np.ndarray
    row_upper: np.ndarray
    x_lower: np.ndarray
    x_upper: np.ndarray
    index: dict = field(default_factory=dict)
    x0: np.ndarray | None = None
    objective_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A)
        self.cost = np.asarray(self.cost, dtype=float)
        for name in ("row_lower", "row_upper", "x_lower", "x_upper"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        m, n = self.A.shape
        if self.cost.shape != (n,) or self.x_lower.shape != (n,) or self.x_upper.shape != (n,):
            raise ValueError("cost and variable bounds must match the column count")
        if self.row_lower.shape != (m,) or self.row_upper.shape != (m,):
            raise ValueError("row bounds must match the row count")

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        return float(self.cost @ x)

    def as_nlp(self) -> NlpProblem:
        A = self.A
        cost = self.cost
        x0 = self.x0 if self.x0 is not None else np.zeros(self.n)
        return NlpProblem(
            n=self.n, m=self.m,
            x_lower=self.x_lower, x_upper=self.x_upper,
            c_lower=self.row_lower, c_upper=self.row_upper, x0=x0,
            objective=lambda x: float(cost @ x),
            gradient=lambda x: cost,
            constraints=lambda x: A @ x,
            jacobian=lambda x: A,
            hessian=None, index=self.index, objective_scale=self.objective_scale,
            meta=self.meta,
        )


def dump(problem: LpProblem | NlpProblem, path, x=None) -> None:
    """Write a plain-text sparse dump for cross-checking with other solvers.

    Sections: ``n m``, then one ``lo hi`` line per variable, one ``lo hi``
    line per row, the objective gradient as ``j value`` lines and the
    constraint Jacobian as ``i j value`` triplets (0-based), all evaluated
    at ``x`` (default: the problem's starting point). Infinite bounds are
    written as ``inf``/``-inf``.
    """
    if isinstance(problem, LpProblem):
        problem = problem.as_nlp()
    x = problem.x0 if x is None else np.asarray(x, dtype=float)
    g = np.asarray(problem.gradient(x), dtype=float)
    J = sp.coo_matrix(problem.jacobian(x))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{problem.n} {problem.m}\n")
        fh.write("# variable bounds\n")
        for lo, hi in zip(problem.x_lower, problem.x_upper):
            fh.write(f"{float(lo)!r} {float(hi)!r}\n")
        fh.write("# row bounds\n")
        for lo, hi in zip(problem.c_lower, problem.c_upper):
            fh.write(f"{float(lo)!r} {float(hi)!r}\n")
        fh.write(f"# gradient nnz {np.count_nonzero(g)}\n")
        for j in np.flatnonzero(g):
            fh.write(f"{j} {float(g[j])!r}\n")
        fh.write(f"# jacobian nnz {J.nnz}\n")
        for i, j, v in zip(J.row, J.col, J.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
