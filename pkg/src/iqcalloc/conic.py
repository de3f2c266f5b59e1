"""Thin LMI-programming layer over cvxpy.

All semidefinite feasibility and optimization problems in the package are
expressed through :class:`LmiProgram` and solved with :func:`solve`, so the
solver backends, tolerance conventions and status mapping live in one place.

Conventions
-----------
* every constraint is "this symmetric affine expression is NSD";
* the objective, when present, is minimized and must be affine or a convex
  quadratic (sum-of-squares) in the declared variables;
* strict inequalities are emulated at call sites by shifting with
  ``eps_strict(scale) * I``;
* a report with status ``optimal``/``feasible`` replays: re-evaluating every
  constraint at the returned assignment gives lambda_max <= FEAS_TOL.

Programs may declare parameters; re-solving the same program with new
parameter values reuses the compiled cvxpy problem, which matters inside
bisection loops and operator-splitting sweeps.
"""

import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .errors import NumericalFailure, Unbounded

__all__ = [
    "FEAS_TOL",
    "OBJ_TOL",
    "LmiProgram",
    "SolveReport",
    "solve",
    "eps_strict",
    "feasible",
]

FEAS_TOL = 1e-7
OBJ_TOL = 1e-6
_STRICT_SCALE = 1e-8

# (solver name, options) tried in order; the first verdict wins.
_SOLVERS = (
    (cp.CLARABEL, {}),
    (cp.SCS, {"eps_abs": 1e-9, "eps_rel": 1e-9, "max_iters": 200_000}),
)


def eps_strict(scale=1.0):
    """Shift used to emulate strict definiteness at a given data scale."""
    return _STRICT_SCALE * max(1.0, float(scale))


class LmiProgram:
    """Container for variables, parameters, NSD constraints and objective."""

    def __init__(self, name=""):
        self.name = name
        self._vars = {}
        self._params = {}
        self._nsd = []  # (label, symmetric affine cvxpy expression)
        self._objective = None
        self._compiled = None

    # -- declarations ---------------------------------------------------
    def scalar(self, name, nonneg=False):
        var = cp.Variable(nonneg=nonneg, name=name)
        self._register(name, var)
        return var

    def symmetric(self, name, dim):
        if dim == 0:
            raise ValueError(f"symmetric variable {name!r} needs dim >= 1")
        var = cp.Variable((dim, dim), symmetric=True, name=name)
        self._register(name, var)
        return var

    def matrix(self, name, rows, cols):
        if rows == 0 or cols == 0:
            raise ValueError(f"matrix variable {name!r} needs nonzero shape")
        var = cp.Variable((rows, cols), name=name)
        self._register(name, var)
        return var

    def parameter(self, name, shape=(), symmetric=False):
        if symmetric:
            par = cp.Parameter(shape, symmetric=True, name=name)
        else:
            par = cp.Parameter(shape, name=name)
        if name in self._params or name in self._vars:
            raise ValueError(f"duplicate declaration {name!r}")
        self._params[name] = par
        return par

    def _register(self, name, var):
        if name in self._vars or name in self._params:
            raise ValueError(f"duplicate declaration {name!r}")
        self._vars[name] = var

    def var(self, name):
        return self._vars[name]

    # -- constraints and objective ---------------------------------------
    def require_nsd(self, expr, label=None):
        """Constrain a symmetric matrix (or scalar) expression to be <= 0."""
        if np.prod(expr.shape or (1,)) == 1:
            expr = cp.reshape(expr, (1, 1), order="F")
        else:
            expr = 0.5 * (expr + expr.T)
        self._nsd.append((label or f"c{len(self._nsd)}", expr))
        self._compiled = None

    def require_psd(self, expr, label=None):
        self.require_nsd(-expr, label=label)

    def minimize(self, expr):
        self._objective = expr
        self._compiled = None

    # -- compilation -----------------------------------------------------
    def _problem(self):
        if self._compiled is None:
            constraints = [expr << 0 for _, expr in self._nsd]
            objective = cp.Minimize(
                self._objective if self._objective is not None else 0)
            self._compiled = cp.Problem(objective, constraints)
        return self._compiled


@dataclass
class SolveReport:
    """Outcome of one :func:`solve` call.

    ``residual`` is the largest eigenvalue over all NSD constraints
    re-evaluated at ``assignments`` (signed; feasible means <= FEAS_TOL).
    """

    status: str
    objective_value: float | None
    assignments: dict = field(default_factory=dict)
    residual: float = float("nan")
    solver: str = ""

    @property
    def is_feasible(self):
        return self.status in ("optimal", "feasible")


def feasible(report):
    return report.is_feasible


def _replay_residual(program):
    worst = -np.inf
    for _, expr in program._nsd:
        val = expr.value
        if val is None:
            return float("nan")
        val = np.atleast_2d(np.asarray(val, dtype=float))
        if val.size == 0:
            continue
        worst = max(worst, float(np.linalg.eigvalsh(0.5 * (val + val.T))[-1]))
    return worst if np.isfinite(worst) else 0.0


def solve(program, params=None, solver=None):
    """Solve an :class:`LmiProgram`, trying backends in order.

    Parameters
    ----------
    program : LmiProgram
    params : dict, optional
        name -> value for every declared parameter.
    solver : str, optional
        Force a single backend instead of the default chain.

    Returns
    -------
    SolveReport
        ``status`` is one of optimal / feasible / infeasible / max_iter.

    Raises
    ------
    Unbounded
        The objective is unbounded below.
    NumericalFailure
        No backend produced a usable verdict.
    """
    if params:
        for name, value in params.items():
            par = program._params[name]
            if par.is_symmetric() and not np.isscalar(value):
                value = 0.5 * (np.asarray(value) + np.asarray(value).T)
            par.value = value
    missing = [n for n, p in program._params.items() if p.value is None]
    if missing:
        raise ValueError(f"unset parameters: {missing}")

    problem = program._problem()
    chain = ((solver, {}),) if solver is not None else _SOLVERS
    has_objective = program._objective is not None
    soft_report = None

    for name, options in chain:
        try:
            with warnings.catch_warnings():
                # inaccurate-solution warnings are handled by the status map
                warnings.simplefilter("ignore", UserWarning)
                problem.solve(solver=name, **options)
        except cp.error.SolverError:
            continue
        status = problem.status
        if status == cp.UNBOUNDED:
            raise Unbounded(f"{program.name or 'program'} is unbounded below")
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return SolveReport("infeasible", None, {}, float("nan"), str(name))
        if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            assign = {
                key: (float(var.value) if var.ndim == 0 else np.array(var.value))
                for key, var in program._vars.items()
            }
            residual = _replay_residual(program)
            report = SolveReport(
                status="optimal" if has_objective else "feasible",
                objective_value=float(problem.value) if has_objective else None,
                assignments=assign,
                residual=residual,
                solver=str(name),
            )
            if status == cp.OPTIMAL or residual <= FEAS_TOL:
                return report
            report.status = "max_iter"
            soft_report = report
            continue
        if status == cp.UNBOUNDED_INACCURATE:
            raise Unbounded(f"{program.name or 'program'} appears unbounded")

    if soft_report is not None:
        return soft_report
    raise NumericalFailure(
        f"all solver backends failed on {program.name or 'program'}")
