import cvxopt  # type: ignore[import-untyped]
from cvxopt import solvers  # type: ignore[import-untyped]
import numpy as np

from itsfuzz.lmi import SDPProblem
from itsfuzz.types import ConstraintCheck
from itsfuzz.types import Solution
from itsfuzz.types import SolverOptions
from itsfuzz.types import SolverStatus


def _min_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((m + m.T) / 2)[0])


def check_solution(
    problem: SDPProblem,
    values: np.ndarray,
    tol: float = SolverOptions().tol_feas,
) -> list[ConstraintCheck]:
    """Dense re-evaluation of every constraint at `values`, independent of
    what the solver reported."""
    checks = []
    for constraint, m in zip(problem.constraints, problem.margins()):
        k = constraint.expr.shape[0]
        eig = _min_eig(constraint.expr.evaluate(values) - m * np.eye(k))
        checks.append(ConstraintCheck(constraint.name, eig, eig >= -tol))
    return checks


def max_violation(checks: list[ConstraintCheck]) -> float:
    """The most negative minimum eigenvalue, zero when nothing is violated."""
    return min([0.0, *(c.min_eig for c in checks)])


def _cone_data(problem: SDPProblem, tol_feas: float):
    """Maps `F_0 - m I + sum_v x_v F_v >= 0` to cvxopt's `h - G x = s >= 0`.
    The extra `tol_feas` shift keeps solver residuals inside the margin."""
    nvars = len(problem.space)
    gs, hs = [], []
    for constraint, m in zip(problem.constraints, problem.margins()):
        expr = constraint.expr
        k = expr.shape[0]
        g = np.zeros((k * k, nvars))
        for v, coef in expr.coefs.items():
            g[:, v] = -coef.ravel(order="F")
        gs.append(cvxopt.matrix(g))
        hs.append(cvxopt.matrix(expr.const - (m + tol_feas) * np.eye(k)))
    return gs, hs


def _objective_vector(problem: SDPProblem) -> np.ndarray:
    c = np.zeros(len(problem.space))
    for v, coef in problem.objective.coefs.items():
        c[v] = coef
    return c


def solve(problem: SDPProblem, options: SolverOptions = SolverOptions()) -> Solution:
    """Minimizes the problem objective with cvxopt's primal-dual interior
    point method. Solutions reported Optimal or Feasible always pass
    `check_solution` at `options.tol_feas`."""
    c = _objective_vector(problem)
    feasibility = not np.any(c)
    if not problem.constraints:
        if feasibility:
            values = np.zeros(len(problem.space))
            return Solution(SolverStatus.FEASIBLE, values, 0.0, problem.objective.offset)
        return Solution(SolverStatus.NUMERICAL_FAILURE, None, 0.0, np.nan, message="unbounded")

    gs, hs = _cone_data(problem, options.tol_feas)
    try:
        sol = solvers.sdp(
            cvxopt.matrix(c),
            Gs=gs,
            hs=hs,
            options={
                "show_progress": False,
                "maxiters": options.max_iter,
                "abstol": options.tol_gap,
                "reltol": options.tol_gap,
                "feastol": options.tol_feas,
            },
        )
    except (ArithmeticError, ValueError) as error:
        return Solution(SolverStatus.NUMERICAL_FAILURE, None, np.nan, np.nan, message=str(error))

    iterations = int(sol.get("iterations", 0))
    match sol["status"]:
        case "primal infeasible":
            return Solution(SolverStatus.INFEASIBLE, None, np.nan, np.nan, iterations, "primal infeasible")
        case "dual infeasible":
            return Solution(SolverStatus.NUMERICAL_FAILURE, None, np.nan, np.nan, iterations, "unbounded")

    if sol["x"] is None:
        return Solution(SolverStatus.NUMERICAL_FAILURE, None, np.nan, np.nan, iterations, sol["status"])
    values = np.array(sol["x"]).ravel()
    violation = max_violation(check_solution(problem, values, options.tol_feas))
    objective = problem.objective.evaluate(values)
    if violation < -options.tol_feas:
        status = (
            SolverStatus.MAX_ITERATIONS
            if iterations >= options.max_iter
            else SolverStatus.NUMERICAL_FAILURE
        )
        return Solution(status, values, violation, objective, iterations, sol["status"])
    if sol["status"] == "optimal":
        status = SolverStatus.FEASIBLE if feasibility else SolverStatus.OPTIMAL
    else:
        # an inaccurate but feasible point
        status = SolverStatus.FEASIBLE
    return Solution(status, values, violation, objective, iterations, sol["status"])


def dump(problem: SDPProblem, values: np.ndarray | None = None) -> str:
    """A stable text listing of variables, objective and constraint blocks."""

    def fmt(m: np.ndarray) -> str:
        return "\n".join("    " + " ".join(f"{e: .6g}" for e in row) for row in m)

    lines = [f"variables {len(problem.space)}"]
    for v, name in enumerate(problem.space.names):
        value = "" if values is None else f" = {values[v]:.10g}"
        lines.append(f"  x{v} {name}{value}")
    coefs = " ".join(f"{c:+.6g}*x{v}" for v, c in sorted(problem.objective.coefs.items()))
    lines.append(f"minimize {problem.objective.offset:.6g} {coefs}".rstrip())
    for constraint, m in zip(problem.constraints, problem.margins()):
        expr = constraint.expr
        sense = f">= {m:.3g} I" if constraint.strict else ">= 0"
        lines.append(f"constraint {constraint.name} {expr.shape[0]}x{expr.shape[1]} {sense}")
        lines.append("  F0")
        lines.append(fmt(expr.const))
        for v in expr.variables:
            lines.append(f"  x{v}")
            lines.append(fmt(expr.coefs[v]))
    return "\n".join(lines) + "\n"
