"""Small convex subproblem solver.

Programs are ``min 0.5 v'Pv + q'v + r`` over a :class:`ConstraintSystem`.
Pure LPs go through HiGHS, linear-row QPs through an operator-splitting
solver (OSQP), and programs with quadratic /
log-sum-exp / norm rows through an interior-point conic solver (Clarabel
via cvxpy).

:class:`QPWorkspace` keeps one factorized OSQP instance alive so that a
sequence of programs differing only in ``q`` (the client subproblem inside
the federated loop) can be re-solved with warm starts.  If OSQP fails once,
the workspace switches to the interior-point path for the rest of its life.
Workspaces hold mutable state; use one per thread.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constraints import ConstraintSystem, NormRow, QuadraticRow, SoftplusRow

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7


class SolverError(RuntimeError):
    """Inner solve failed; ``residuals`` carries the last residual report."""

    def __init__(self, message: str, residuals: dict | None = None, status: str = ""):
        super().__init__(message)
        self.residuals = residuals or {}
        self.status = status


class InfeasibleError(SolverError):
    pass


@dataclass
class ConvexProgram:
    cs: ConstraintSystem
    q: np.ndarray
    P: sp.spmatrix | None = None
    r: float = 0.0
    warm: np.ndarray | None = None

    def __post_init__(self):
        n = self.cs.n_vars
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        if self.q.shape != (n,):
            raise ValueError(f"linear term has length {self.q.size}, layout has {n} variables")
        self.P = sp.csc_matrix((n, n)) if self.P is None else sp.csc_matrix(self.P)
        if self.P.shape != (n, n):
            raise ValueError("quadratic term does not match the layout")

    def objective(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(0.5 * v @ (self.P @ v) + self.q @ v + self.r)


@dataclass
class Solution:
    x: np.ndarray
    objective: float
    residuals: dict = field(default_factory=dict)
    status: str = ""
    iterations: int = 0
    y: np.ndarray | None = None

    def block(self, cs: ConstraintSystem, name: str) -> np.ndarray:
        return self.x[cs.layout[name]]


def _stack_constraints(cs: ConstraintSystem):
    n = cs.n_vars
    mats, lo, hi = [cs.A], [np.full(cs.A.shape[0], -np.inf)], [cs.b]
    if cs.Aeq is not None and cs.Aeq.shape[0]:
        mats.append(cs.Aeq)
        lo.append(cs.beq)
        hi.append(cs.beq)
    bounded = np.nonzero(np.isfinite(cs.lb) | np.isfinite(cs.ub))[0]
    if bounded.size:
        mats.append(sp.csr_matrix((np.ones(bounded.size), (np.arange(bounded.size), bounded)), shape=(bounded.size, n)))
        lo.append(cs.lb[bounded])
        hi.append(cs.ub[bounded])
    return sp.vstack(mats, format="csc"), np.concatenate(lo), np.concatenate(hi)


def _check(prog: ConvexProgram, x: np.ndarray, tol: float, status: str, accept_tol: float):
    residuals = prog.cs.violations(x)
    worst = max(residuals.values())
    if worst > accept_tol:
        raise SolverError(
            f"inner solver did not reach feasibility (status {status!r}, worst violation {worst:.3e})",
            residuals,
            status,
        )
    return residuals


class QPWorkspace:
    """Reusable OSQP instance for programs that only change in ``q``."""

    def __init__(self, prog: ConvexProgram, tol: float = DEFAULT_TOL, max_iter: int = 4000):
        import osqp

        if not prog.cs.is_linear:
            raise ValueError("QPWorkspace needs a program with linear rows only")
        self.prog = prog
        self.tol = tol
        self._A, self._l, self._u = _stack_constraints(prog.cs)
        self._solver = osqp.OSQP()
        self._solver.setup(
            sp.triu(prog.P, format="csc"),
            prog.q,
            self._A,
            self._l,
            self._u,
            verbose=False,
            # polishing adds little at these tolerances and prints to stdout
            polishing=False,
            eps_abs=tol,
            eps_rel=tol,
            eps_prim_inf=1e-9,
            eps_dual_inf=1e-9,
            max_iter=max_iter,
            warm_starting=True,
        )
        self._y = None
        self._fallback = None

    def solve(self, q=None, warm=None) -> Solution:
        if self._fallback is None:
            try:
                return self._solve_osqp(q, warm)
            except InfeasibleError:
                raise
            except SolverError as exc:
                # large, nearly-LP subproblems stall the splitting method;
                # switch this workspace to interior point for good
                log.debug("OSQP failed (%s); switching to interior point", exc)
                self._fallback = ConvexWorkspace(self.prog, self.tol)
        if q is not None:
            self.prog.q = np.asarray(q, dtype=float)
        return self._fallback.solve(q=self.prog.q)

    def _solve_osqp(self, q=None, warm=None) -> Solution:
        prog = self.prog
        if q is not None:
            q = np.asarray(q, dtype=float)
            self._solver.update(q=q)
            prog.q = q
        if warm is not None:
            if self._y is not None:
                self._solver.warm_start(x=warm, y=self._y)
            else:
                self._solver.warm_start(x=warm)
        res = self._solver.solve(raise_error=False)
        status = res.info.status
        if "infeasible" in status:
            raise InfeasibleError(f"subproblem reported {status!r}", {"primal": res.info.prim_res}, status)
        if res.x is None or not np.all(np.isfinite(res.x)):
            raise SolverError(f"subproblem returned no solution ({status!r})", {}, status)
        x = res.x
        residuals = _check(prog, x, self.tol, status, accept_tol=max(1e3 * self.tol, 1e-5))
        residuals["dual"] = float(res.info.dual_res)
        if status not in ("solved", "solved inaccurate"):
            raise SolverError(f"subproblem not solved ({status!r})", residuals, status)
        self._y = res.y
        return Solution(x, prog.objective(x), residuals, status, int(res.info.iter), res.y)


def solve_qp(prog: ConvexProgram, tol: float = DEFAULT_TOL) -> Solution:
    """Solve a program whose rows are all linear (QP or LP)."""
    ws = QPWorkspace(prog, tol=tol)
    return ws.solve(warm=prog.warm)


def solve_lp(prog: ConvexProgram, tol: float = DEFAULT_TOL) -> Solution:
    """Solve a program with linear rows and no quadratic term (HiGHS simplex/IPM)."""
    from scipy.optimize import linprog

    cs = prog.cs
    if not cs.is_linear or prog.P.nnz:
        raise ValueError("solve_lp needs linear rows and a linear objective")
    bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi) for lo, hi in zip(cs.lb, cs.ub)]
    has_eq = cs.Aeq is not None and cs.Aeq.shape[0]
    res = linprog(
        prog.q,
        A_ub=cs.A if cs.A.shape[0] else None,
        b_ub=cs.b if cs.A.shape[0] else None,
        A_eq=cs.Aeq if has_eq else None,
        b_eq=cs.beq if has_eq else None,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": max(tol, 1e-10), "dual_feasibility_tolerance": max(tol, 1e-10)},
    )
    if res.status == 2:
        raise InfeasibleError("program is infeasible", {}, res.message)
    if res.status == 3:
        raise SolverError("program is unbounded", {}, res.message)
    if res.x is None:
        raise SolverError(f"linear solve failed: {res.message}", {}, res.message)
    residuals = _check(prog, res.x, tol, res.message, accept_tol=max(1e3 * tol, 1e-7))
    return Solution(res.x, prog.objective(res.x), residuals, "solved", int(res.nit))


def _clarabel_settings(tol: float) -> dict:
    return {
        "tol_gap_abs": tol,
        "tol_gap_rel": tol,
        "tol_feas": tol,
        "tol_ktratio": min(1e-6, tol),
        "max_iter": 500,
    }


class ConvexWorkspace:
    """Compiled conic program whose linear objective term can be swapped."""

    def __init__(self, prog: ConvexProgram, tol: float = DEFAULT_TOL):
        import cvxpy as cp

        self.prog = prog
        self.tol = tol
        cs = prog.cs
        x = cp.Variable(cs.n_vars)
        self._q = cp.Parameter(cs.n_vars, value=prog.q)
        obj = self._q @ x + prog.r
        if prog.P.nnz:
            obj = obj + 0.5 * cp.quad_form(x, cp.psd_wrap(prog.P))
        cons = []
        if cs.A.shape[0]:
            cons.append(cs.A @ x <= cs.b)
        if cs.Aeq is not None and cs.Aeq.shape[0]:
            cons.append(cs.Aeq @ x == cs.beq)
        lo = np.isfinite(cs.lb)
        hi = np.isfinite(cs.ub)
        if lo.any():
            cons.append(x[np.nonzero(lo)[0]] >= cs.lb[lo])
        if hi.any():
            cons.append(x[np.nonzero(hi)[0]] <= cs.ub[hi])
        for row in cs.nonlinear:
            if isinstance(row, QuadraticRow):
                cons.append(0.5 * cp.square(row.g @ x + row.h) + row.a @ x <= row.b)
            elif isinstance(row, SoftplusRow):
                cons.append(cp.logistic(row.g @ x + row.h) + row.a @ x <= row.b)
            elif isinstance(row, NormRow):
                cons.append(cp.norm(row.M @ x + row.m0, row.p) <= row.a @ x + row.b)
            else:
                raise TypeError(f"unsupported row type {type(row).__name__}")
        self._x = x
        self._problem = cp.Problem(cp.Minimize(obj), cons)

    def solve(self, q=None, warm=None) -> Solution:
        import cvxpy as cp

        prog = self.prog
        if q is not None:
            prog.q = np.asarray(q, dtype=float)
            self._q.value = prog.q
        try:
            self._problem.solve(solver=cp.CLARABEL, **_clarabel_settings(self.tol))
        except cp.error.SolverError as exc:
            raise SolverError(f"conic solve failed: {exc}") from exc
        status = self._problem.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise InfeasibleError("program is infeasible", {}, status)
        if self._x.value is None:
            raise SolverError(f"conic solve returned no point ({status})", {}, status)
        xv = np.asarray(self._x.value, dtype=float)
        residuals = _check(prog, xv, self.tol, status, accept_tol=max(1e3 * self.tol, 1e-6))
        iters = int(self._problem.solver_stats.num_iters or 0)
        return Solution(xv, prog.objective(xv), residuals, status, iters)


def solve_convex(prog: ConvexProgram, tol: float = DEFAULT_TOL) -> Solution:
    """Solve a program with any supported row family (interior point)."""
    return ConvexWorkspace(prog, tol).solve()


def workspace(prog: ConvexProgram, tol: float = DEFAULT_TOL):
    """Reusable solver for a sequence of programs that differ only in ``q``."""
    if prog.cs.is_linear:
        return QPWorkspace(prog, tol)
    return ConvexWorkspace(prog, tol)


def solve(prog: ConvexProgram, tol: float = DEFAULT_TOL, method: str | None = None) -> Solution:
    """Dispatch on the row families.

    ``"lp"`` (HiGHS) for linear programs, ``"qp"`` (splitting) for linear
    rows with a quadratic term, ``"convex"`` (interior point) otherwise.
    """
    if method is None:
        if not prog.cs.is_linear:
            method = "convex"
        else:
            method = "lp" if prog.P.nnz == 0 else "qp"
    if method == "lp":
        return solve_lp(prog, tol)
    if method == "qp":
        return solve_qp(prog, tol)
    if method == "convex":
        return solve_convex(prog, tol)
    raise ValueError(f"unknown method {method!r}")
