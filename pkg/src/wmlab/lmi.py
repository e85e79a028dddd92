"""Linear matrix inequality problems and their solution certificates.

A problem is a linear objective over named decision variables (symmetric
matrix blocks or scalars) subject to affine matrix expressions constrained
to the negative or positive semidefinite cone.  Solving is delegated to a
conic solver (Clarabel, falling back to SCS), but every claimed-optimal
assignment is re-checked here by direct eigenvalue computation, so a
returned Optimal always carries an independently verified certificate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

FEASIBILITY_TOL = 1e-7
DUALITY_GAP_TOL = 1e-7
MAX_SOLVER_ITERS = 500
EPS_STRICT = 1e-8  # default shift turning strict inequalities into closed ones


class LmiStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class LmiConstraint:
    """An affine matrix expression tagged with its cone sense.

    "neg" and "pos" place a symmetric expression in the negative/positive
    semidefinite cone; "zero" pins a (possibly rectangular) expression to the
    origin, which conic solvers handle natively via the zero cone.
    """

    expr: cp.Expression
    sense: str  # "neg" for <= 0, "pos" for >= 0, "zero" for == 0
    label: str = ""

    def __post_init__(self):
        if self.sense not in ("neg", "pos", "zero"):
            raise ValueError(f"sense must be 'neg', 'pos' or 'zero', got {self.sense!r}")
        shape = self.expr.shape
        if self.sense != "zero" and (len(shape) != 2 or shape[0] != shape[1]):
            raise ValueError(f"constraint expression must be square, got {shape}")


@dataclass
class LmiProblem:
    variables: dict[str, cp.Variable]
    objective: cp.Expression
    constraints: list[LmiConstraint]
    eps_strict: float = EPS_STRICT

    def __post_init__(self):
        declared = {v.id for v in self.variables.values()}
        for c in self.constraints:
            for v in c.expr.variables():
                if v.id not in declared:
                    raise ValueError(
                        f"constraint {c.label!r} references undeclared variable {v.name()!r}"
                    )


@dataclass
class LmiSolution:
    status: LmiStatus
    objective: float | None
    assignment: dict[str, np.ndarray | float]
    max_violation: float
    solver: str = ""


def symmetric_var(name: str, n: int) -> cp.Variable:
    return cp.Variable((n, n), symmetric=True, name=name)


def scalar_var(name: str) -> cp.Variable:
    return cp.Variable(name=name)


def as_matrix_expr(e) -> cp.Expression:
    """Wrap a scalar cvxpy expression as a 1x1 matrix for cone membership."""
    e = cp.Expression.cast_to_const(e) if not isinstance(e, cp.Expression) else e
    if e.shape == ():
        return cp.reshape(e, (1, 1), order="C")
    return e


def psd_residual(M) -> float:
    """Largest eigenvalue of the symmetrized matrix; <= 0 means it is NSD."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.max(np.linalg.eigvalsh((M + M.T) / 2.0)))


def _violation(sol_constraints: list[LmiConstraint]) -> float:
    worst = 0.0
    for c in sol_constraints:
        val = c.expr.value
        if val is None:
            return np.inf
        if c.sense == "zero":
            r = float(np.max(np.abs(val), initial=0.0))
        elif c.sense == "neg":
            r = psd_residual(val)
        else:
            r = -float(
                np.min(np.linalg.eigvalsh((np.atleast_2d(val) + np.atleast_2d(val).T) / 2))
            )
        worst = max(worst, r)
    return worst


_SOLVER_SETTINGS = {
    "CLARABEL": dict(max_iter=MAX_SOLVER_ITERS, tol_gap_abs=1e-9, tol_gap_rel=1e-9,
                     tol_feas=1e-9),
    "SCS": dict(max_iters=20000, eps_abs=1e-9, eps_rel=1e-9),
}


def solve(problem: LmiProblem, solvers: tuple[str, ...] = ("CLARABEL", "SCS")) -> LmiSolution:
    """Solve the LMI problem; Optimal is only reported with a verified certificate.

    Statuses: Optimal (objective within gap tolerance, constraints within
    FEASIBILITY_TOL when re-checked), Infeasible, Unbounded, or
    NumericalFailure when no solver produces a verifiable outcome.
    """
    cvx_cons = []
    for c in problem.constraints:
        if c.sense == "zero":
            cvx_cons.append(c.expr == 0)
        else:
            cvx_cons.append(c.expr << 0 if c.sense == "neg" else c.expr >> 0)
    prob = cp.Problem(cp.Minimize(problem.objective), cvx_cons)

    for name in solvers:
        if name not in cp.installed_solvers():
            continue
        try:
            prob.solve(solver=name, **_SOLVER_SETTINGS.get(name, {}))
        except (cp.SolverError, ValueError):
            continue
        st = prob.status
        if st in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            viol = _violation(problem.constraints)
            if viol <= FEASIBILITY_TOL:
                assignment = {
                    k: (float(v.value) if v.shape == () else np.asarray(v.value))
                    for k, v in problem.variables.items()
                }
                return LmiSolution(
                    status=LmiStatus.OPTIMAL,
                    objective=float(prob.value),
                    assignment=assignment,
                    max_violation=viol,
                    solver=name,
                )
            continue  # claimed optimal but certificate fails: try next solver
        if st in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return LmiSolution(LmiStatus.INFEASIBLE, None, {}, np.inf, name)
        if st in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return LmiSolution(LmiStatus.UNBOUNDED, None, {}, np.inf, name)
    return LmiSolution(LmiStatus.NUMERICAL_FAILURE, None, {}, np.inf, "")


def dump_problem(problem: LmiProblem) -> dict:
    """Self-describing JSON structure of a posed problem, for offline inspection."""
    return {
        "variables": {k: list(v.shape) for k, v in problem.variables.items()},
        "objective": str(problem.objective),
        "eps_strict": problem.eps_strict,
        "constraints": [
            {
                "label": c.label,
                "sense": {"neg": "<=0", "pos": ">=0", "zero": "==0"}[c.sense],
                "shape": list(c.expr.shape),
                "expr": str(c.expr),
            }
            for c in problem.constraints
        ],
    }
