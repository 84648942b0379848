"""LP and NLP solve entry points with explicit optimality contracts.

Set ``BATTMPC_SOLVER_THREADS`` to cap the BLAS/OpenMP threads used during a
solve (the sparse factorization itself is single threaded).
"""

from __future__ import annotations

import contextlib
import enum
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from battmpc.solvers import ipm
from battmpc.solvers.ipm import IpmOptions, Warm
from battmpc.solvers.problems import LpProblem, NlpProblem, dump

__all__ = [
    "Status", "SolveReport", "LpProblem", "NlpProblem", "IpmOptions", "Warm",
    "solve_lp", "solve_nlp", "dump", "LP_TOL", "NLP_TOL",
]

LP_TOL = 1e-8
NLP_TOL = 1e-6
THREADS_ENV = "BATTMPC_SOLVER_THREADS"


class Status(enum.Enum):
    OPTIMAL = ipm.OPTIMAL
    INFEASIBLE = ipm.INFEASIBLE
    ITERATION_LIMIT = ipm.ITERATION_LIMIT
    NUMERICAL_FAILURE = ipm.NUMERICAL_FAILURE


@dataclass
class SolveReport:
    status: Status
    x: np.ndarray
    objective: float
    primal_infeasibility: float
    dual_infeasibility: float
    complementarity: float
    kkt_error: float
    duality_gap: float
    iterations: int
    wall_time: float
    y: np.ndarray | None = None
    z_lower: np.ndarray | None = None
    z_upper: np.ndarray | None = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def warm(self, mu=1e-6) -> Warm:
        """Starting point for a re-solve of a structurally identical problem."""
        return Warm(self.x, self.y, self.z_lower, self.z_upper, mu)


@contextlib.contextmanager
def _thread_cap():
    cap = os.environ.get(THREADS_ENV)
    if not cap:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=int(cap)):
        yield


def _report(r: ipm.IpmResult) -> SolveReport:
    return SolveReport(
        status=Status(r.status), x=r.x, objective=r.objective,
        primal_infeasibility=r.primal_infeasibility, dual_infeasibility=r.dual_infeasibility,
        complementarity=r.complementarity, kkt_error=r.kkt_error, duality_gap=r.duality_gap,
        iterations=r.iterations, wall_time=r.wall_time, y=r.y, z_lower=r.vl, z_upper=r.vu,
        message=r.message,
    )


def _phase_one(p: LpProblem, opts: IpmOptions) -> tuple[float, ipm.IpmResult]:
    """Minimise total row violation; a positive optimum certifies infeasibility."""
    m, n = p.m, p.n
    A = sp.hstack((p.A, sp.identity(m), -sp.identity(m)), format="csr")
    cost = np.concatenate((np.zeros(n), np.ones(2 * m)))
    x_lo = np.concatenate((p.x_lower, np.zeros(2 * m)))
    x_hi = np.concatenate((p.x_upper, np.full(2 * m, np.inf)))
    aux = LpProblem(cost, A, p.row_lower, p.row_upper, x_lo, x_hi)
    r = ipm.solve_lp_ipm(aux.as_nlp(), opts)
    return r.objective, r


def solve_lp(p: LpProblem, opts: IpmOptions | None = None, warm: Warm | None = None) -> SolveReport:
    """Solve an LP to ``tol`` (default 1e-8) in primal/dual feasibility and gap.

    If the main solve does not converge, a phase-1 problem decides between
    ``Infeasible`` and the original failure status.
    """
    opts = opts or IpmOptions(tol=LP_TOL, max_iter=200)
    with _thread_cap():
        if np.any(p.x_lower > p.x_upper) or np.any(p.row_lower > p.row_upper):
            r = ipm.solve_lp_ipm(p.as_nlp(), opts)
            return _report(r)
        r = ipm.solve_lp_ipm(p.as_nlp(), opts, warm)
        if r.status == ipm.OPTIMAL:
            return _report(r)
        viol, r1 = _phase_one(p, opts)
        rep = _report(r)
        if r1.status == ipm.OPTIMAL and viol > 1e3 * opts.tol * (1 + np.abs(p.row_lower[np.isfinite(p.row_lower)]).max(initial=0.0)):
            rep.status = Status.INFEASIBLE
            rep.message = f"phase-1 optimum {viol:.3e} > 0"
        return rep


def solve_nlp(p: NlpProblem, warm: Warm | None = None, opts: IpmOptions | None = None) -> SolveReport:
    """Local solution with scaled KKT residual below ``tol`` (default 1e-6)."""
    opts = opts or IpmOptions(tol=NLP_TOL, max_iter=3000)
    with _thread_cap():
        if p.is_linear:
            return _report(ipm.solve_lp_ipm(p, opts, warm))
        return _report(ipm.solve_nlp_ipm(p, opts, warm))
