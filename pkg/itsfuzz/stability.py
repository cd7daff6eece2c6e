from concurrent.futures import ProcessPoolExecutor
from math import floor
from typing import Iterable

import numpy as np
import pandas as pd
from rich.console import Console
from rich.progress import track

from itsfuzz.errors import InvalidModel
from itsfuzz.lmi import MatExpr
from itsfuzz.lmi import Pattern
from itsfuzz.lmi import SDPProblem
from itsfuzz.lmi import StructuredMatVar
from itsfuzz.lmi.solver import solve
from itsfuzz.tsmodel import beta_bounds
from itsfuzz.tsmodel import closed_loop
from itsfuzz.tsmodel import validate
from itsfuzz.tsmodel import with_parameters
from itsfuzz.types import AnalysisResult
from itsfuzz.types import CellStatus
from itsfuzz.types import LineIntegralCertificate
from itsfuzz.types import QuadraticCertificate
from itsfuzz.types import RegionSweep
from itsfuzz.types import SolverOptions
from itsfuzz.types import SolverStatus
from itsfuzz.types import SweepParameter
from itsfuzz.types import TSModel

METHODS = ("theorem1", "corollary1")
# strict inequalities are checked against this floor on recovered certificates
CHECK_TOL = 1e-12


def line_integral_structure(
    problem: SDPProblem, model: TSModel
) -> tuple[StructuredMatVar, StructuredMatVar, StructuredMatVar, list[StructuredMatVar]]:
    """Registers P-bar (hollow), the shared diagonal pool, the cap D and
    assembles the rule diagonals D_k from the pool."""
    pbar = problem.var("Pbar", Pattern.HOLLOW_SYMMETRIC, model.n)
    pool = problem.var("d", Pattern.SHARED_DIAGONAL, model.n, sizes=model.sizes)
    cap = problem.var("D", Pattern.DIAGONAL, model.n)
    rules = [pool.at(alpha) for alpha in model.ordinals.tolist()]
    return pbar, pool, cap, rules


def aliased_blocks(
    problem: SDPProblem, prefix: str, s: int, n: int, suffix: tuple = ()
) -> dict[tuple[int, int], StructuredMatVar]:
    """Symmetric blocks Q_ij with Q_ij and Q_ji sharing the same variable."""
    blocks = {}
    for i in range(s):
        for j in range(i, s):
            label = ",".join(str(e + 1) for e in (i, j, *suffix))
            var = problem.var(f"{prefix}[{label}]", Pattern.FULL_SYMMETRIC, n)
            blocks[(i, j)] = blocks[(j, i)] = var
    return blocks


def _structural_constraints(problem, pbar, cap, rules):
    for k, dk in enumerate(rules):
        problem.constrain(f"P{k + 1} > 0", pbar + dk)
    for k, dk in enumerate(rules):
        problem.constrain(f"D - D{k + 1} >= 0", cap - dk, strict=False)


def build_theorem1(model: TSModel, beta: float, eps: float = 1e-6) -> SDPProblem:
    """The line-integral conditions for the unforced model: P_k = Pbar + D_k > 0,
    D - D_k >= 0, (P_j A_i)^S + C_i^T (P_j + beta D) C_i + Q_ij < 0 and the
    block matrix [Q_ij] > 0."""
    problem = SDPProblem(eps)
    pbar, _, cap, rules = line_integral_structure(problem, model)
    _structural_constraints(problem, pbar, cap, rules)
    rule_p = [pbar + dk for dk in rules]
    q = aliased_blocks(problem, "Q", model.s, model.n)
    for i in range(model.s):
        for j in range(model.s):
            expr = (
                (rule_p[j] @ model.A[i]).sym()
                + (rule_p[j] + beta * cap.expr).congruence(model.C[i])
                + q[(i, j)]
            )
            problem.constrain(f"LV[{i + 1},{j + 1}] < 0", -expr)
    theta = MatExpr.block([[q[(i, j)] for j in range(model.s)] for i in range(model.s)])
    problem.constrain("Theta > 0", theta)
    return problem


def build_theorem2(
    model: TSModel, gains: np.ndarray, beta: float, eps: float = 1e-6
) -> SDPProblem:
    """The line-integral conditions for the loop closed by `gains`, indexed
    by (i, j, k) with drift vertices A_ij = A_i + B_i K_j and one block
    matrix [Q_ijk]_{ij} per k."""
    vertices = closed_loop(model, gains).vertices
    problem = SDPProblem(eps)
    pbar, _, cap, rules = line_integral_structure(problem, model)
    _structural_constraints(problem, pbar, cap, rules)
    rule_p = [pbar + dk for dk in rules]
    s = model.s
    for k in range(s):
        q = aliased_blocks(problem, "Q", s, model.n, suffix=(k,))
        for i in range(s):
            for j in range(s):
                expr = (
                    (rule_p[k] @ vertices[i, j]).sym()
                    + (rule_p[k] + beta * cap.expr).congruence(model.C[i])
                    + q[(i, j)]
                )
                problem.constrain(f"LV[{i + 1},{j + 1},{k + 1}] < 0", -expr)
        theta = MatExpr.block([[q[(i, j)] for j in range(s)] for i in range(s)])
        problem.constrain(f"Theta{k + 1} > 0", theta)
    return problem


def build_corollary1(model: TSModel, eps: float = 1e-6) -> SDPProblem:
    """Common quadratic conditions: P > 0, Q_i > 0 and
    (P A_i)^S + C_i^T P C_i + Q_i < 0. Any rule base is accepted."""
    problem = SDPProblem(eps)
    p = problem.var("P", Pattern.FULL_SYMMETRIC, model.n)
    problem.constrain("P > 0", p)
    q = [problem.var(f"Q[{i + 1}]", Pattern.FULL_SYMMETRIC, model.n) for i in range(model.s)]
    for i, qi in enumerate(q):
        problem.constrain(f"Q{i + 1} > 0", qi)
    for i, qi in enumerate(q):
        expr = (p @ model.A[i]).sym() + p.congruence(model.C[i]) + qi
        problem.constrain(f"LV[{i + 1}] < 0", -expr)
    return problem


def _pool_values(problem: SDPProblem, model: TSModel, values: np.ndarray) -> tuple:
    pool = problem.variables["d"].pool
    return tuple(
        np.array([values[pool[(j, rho)]] for rho in range(1, size + 1)])
        for j, size in enumerate(model.sizes)
    )


def extract_line_integral(
    problem: SDPProblem,
    model: TSModel,
    values: np.ndarray,
    beta: float,
    gains: np.ndarray | None = None,
) -> LineIntegralCertificate:
    vs = problem.variables
    q = {}
    for name, var in vs.items():
        if name.startswith("Q["):
            index = tuple(int(e) - 1 for e in name[2:-1].split(","))
            q[index] = var.value(values)
            q[(index[1], index[0], *index[2:])] = q[index]
    return LineIntegralCertificate(
        kind="theorem1" if gains is None else "theorem2",
        ordinals=model.ordinals.copy(),
        pbar=vs["Pbar"].value(values),
        pool=_pool_values(problem, model, values),
        D=vs["D"].value(values),
        q=q,
        beta=float(beta),
        gains=None if gains is None else np.asarray(gains, dtype=float),
    )


def extract_quadratic(
    problem: SDPProblem, model: TSModel, values: np.ndarray
) -> QuadraticCertificate:
    vs = problem.variables
    return QuadraticCertificate(
        P=vs["P"].value(values),
        q=tuple(vs[f"Q[{i + 1}]"].value(values) for i in range(model.s)),
    )


def rule_matrices(certificate: LineIntegralCertificate) -> np.ndarray:
    """P_k = Pbar + D_k for every rule, shape (s, n, n)."""
    diagonals = np.array(
        [
            [certificate.pool[j][rho - 1] for j, rho in enumerate(alpha)]
            for alpha in certificate.ordinals.tolist()
        ]
    )
    return certificate.pbar[None] + np.einsum("kj,jl->kjl", diagonals, np.eye(diagonals.shape[1]))


def rule_diagonals(certificate: LineIntegralCertificate) -> np.ndarray:
    return rule_matrices(certificate) - certificate.pbar[None]


def _eigs(m: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh((m + m.T) / 2)


def _line_integral_blocks(model: TSModel, certificate: LineIntegralCertificate):
    """Yields (label, matrix) pairs that must be negative definite."""
    p = rule_matrices(certificate)
    beta_cap = certificate.beta * certificate.D
    if certificate.gains is None:
        for i in range(model.s):
            for j in range(model.s):
                pa = p[j] @ model.A[i]
                yield (
                    f"LV[{i + 1},{j + 1}]",
                    pa + pa.T + model.C[i].T @ (p[j] + beta_cap) @ model.C[i] + certificate.q[(i, j)],
                )
        return
    vertices = closed_loop(model, certificate.gains).vertices
    for i in range(model.s):
        for j in range(model.s):
            for k in range(model.s):
                pa = p[k] @ vertices[i, j]
                yield (
                    f"LV[{i + 1},{j + 1},{k + 1}]",
                    pa + pa.T + model.C[i].T @ (p[k] + beta_cap) @ model.C[i] + certificate.q[(i, j, k)],
                )


def _theta_blocks(model: TSModel, certificate: LineIntegralCertificate):
    s = model.s
    if certificate.gains is None:
        yield "Theta", np.block([[certificate.q[(i, j)] for j in range(s)] for i in range(s)])
        return
    for k in range(s):
        yield f"Theta{k + 1}", np.block(
            [[certificate.q[(i, j, k)] for j in range(s)] for i in range(s)]
        )


def check_certificate(
    model: TSModel,
    certificate: LineIntegralCertificate | QuadraticCertificate,
    tol: float = SolverOptions().tol_feas,
) -> list[str]:
    """Dense eigenvalue checks of every certificate invariant. Returns the
    violated ones, an empty list meaning the certificate holds."""
    failures = []
    if isinstance(certificate, QuadraticCertificate):
        if _eigs(certificate.P)[0] <= CHECK_TOL:
            failures.append("P > 0")
        for i, qi in enumerate(certificate.q):
            if _eigs(qi)[0] <= CHECK_TOL:
                failures.append(f"Q{i + 1} > 0")
            pa = certificate.P @ model.A[i]
            lv = pa + pa.T + model.C[i].T @ certificate.P @ model.C[i] + qi
            if _eigs(lv)[-1] >= -CHECK_TOL:
                failures.append(f"LV[{i + 1}] < 0")
        return failures

    if np.any(np.diag(certificate.pbar) != 0) or not np.allclose(certificate.pbar, certificate.pbar.T):
        failures.append("Pbar hollow symmetric")
    for k, (pk, dk) in enumerate(zip(rule_matrices(certificate), rule_diagonals(certificate))):
        if _eigs(pk)[0] <= CHECK_TOL:
            failures.append(f"P{k + 1} > 0")
        if _eigs(certificate.D - dk)[0] < -tol:
            failures.append(f"D - D{k + 1} >= 0")
    for key, qij in certificate.q.items():
        other = (key[1], key[0], *key[2:])
        if not np.array_equal(qij, certificate.q[other]) or not np.allclose(qij, qij.T):
            failures.append(f"Q{list(key)} symmetry")
    for label, block in _line_integral_blocks(model, certificate):
        if _eigs(block)[-1] >= -CHECK_TOL:
            failures.append(f"{label} < 0")
    for label, theta in _theta_blocks(model, certificate):
        if _eigs(theta)[0] <= CHECK_TOL:
            failures.append(f"{label} > 0")
    return failures


def analyze(
    model: TSModel,
    method: str,
    beta: float | None = None,
    options: SolverOptions = SolverOptions(),
) -> AnalysisResult:
    """Builds and solves the conditions of `method`, then re-validates the
    recovered certificate.

    :param model: the unforced model, B is ignored.
    :param method: `theorem1` (line-integral) or `corollary1` (quadratic).
    :param beta: the derivative bound, required by `theorem1`.
    :param options: solver settings.
    :return:
    """
    match method:
        case "theorem1":
            if beta is None:
                raise ValueError("Line-integral analysis needs a beta bound.")
            if errors := validate(model).errors(line_integral=True):
                raise InvalidModel(errors)
            problem = build_theorem1(model, beta, options.eps)
        case "corollary1":
            if errors := validate(model).errors(line_integral=False):
                raise InvalidModel(errors)
            problem = build_corollary1(model, options.eps)
        case _:
            raise ValueError(f"Unknown method `{method}`.")

    solution = solve(problem, options)
    if not solution.status.ok:
        return AnalysisResult(method, solution.status, None, solution, [])
    if method == "theorem1":
        certificate = extract_line_integral(problem, model, solution.values, beta)
    else:
        certificate = extract_quadratic(problem, model, solution.values)
    failures = check_certificate(model, certificate, options.tol_feas)
    return AnalysisResult(method, solution.status, certificate, solution, failures)


def embed_quadratic(
    problem: SDPProblem,
    model: TSModel,
    certificate: QuadraticCertificate,
    delta: float = 0.0,
    margin: float = 0.0,
) -> np.ndarray:
    """A `build_theorem1` assignment made of a quadratic certificate:
    Pbar = offdiag(P), every d_jj^rho = P_jj, D = diag(P) + margin * I,
    Q_ii = Q_i and Q_ij = delta * I for i != j."""
    values = np.zeros(len(problem.space))
    vs = problem.variables
    p = certificate.P

    def assign(var: StructuredMatVar, matrix: np.ndarray):
        mask = var.slots >= 0
        values[var.slots[mask]] = matrix[mask]

    assign(vs["Pbar"], p - np.diag(np.diag(p)))
    for (j, _), v in vs["d"].pool.items():
        values[v] = p[j, j]
    assign(vs["D"], np.diag(np.diag(p) + margin))
    for i in range(model.s):
        for j in range(i, model.s):
            block = certificate.q[i] if i == j else delta * np.eye(model.n)
            assign(vs[f"Q[{i + 1},{j + 1}]"], block)
    return values


def as_line_integral(
    model: TSModel, certificate: QuadraticCertificate, beta: float = 0.0
) -> LineIntegralCertificate:
    """The line-integral form of a common quadratic certificate: every rule
    diagonal equals diag(P), so V(x) = x^T P x."""
    p = certificate.P
    pool = tuple(np.full(size, p[j, j]) for j, size in enumerate(model.sizes))
    q = {(i, i): qi for i, qi in enumerate(certificate.q)}
    for i in range(model.s):
        for j in range(model.s):
            q.setdefault((i, j), np.zeros_like(p))
    return LineIntegralCertificate(
        kind="corollary1",
        ordinals=model.ordinals.copy(),
        pbar=p - np.diag(np.diag(p)),
        pool=pool,
        D=np.diag(np.diag(p)),
        q=q,
        beta=float(beta),
    )


def grid_values(parameter: SweepParameter) -> np.ndarray:
    count = int(floor((parameter.stop - parameter.start) / parameter.step + 1e-9)) + 1
    return np.round(parameter.start + parameter.step * np.arange(count), 10)


def cell_status(result: AnalysisResult) -> CellStatus:
    if result.feasible:
        return CellStatus.FEASIBLE
    if result.status == SolverStatus.INFEASIBLE:
        return CellStatus.INFEASIBLE
    return CellStatus.FAILURE


def _sweep_cell(args) -> tuple[CellStatus, CellStatus]:
    model, parameters, values, beta, options = args
    cell_model = with_parameters(model, parameters, values)
    statuses = []
    for method in METHODS:
        try:
            result = analyze(cell_model, method, beta, options)
        except (ArithmeticError, ValueError):
            statuses.append(CellStatus.FAILURE)
            continue
        statuses.append(cell_status(result))
    return statuses[0], statuses[1]


def sweep(
    model: TSModel,
    parameters: tuple[SweepParameter, SweepParameter],
    beta: float | None = None,
    options: SolverOptions = SolverOptions(),
    workers: int = 1,
    console: Console | None = None,
) -> RegionSweep:
    """Solves both methods on every cell of a two-parameter grid.

    Cells are enumerated row-major, the first parameter outer. Memberships do
    not depend on the swept slots, so beta is computed once.

    :param model: a template model, the swept slots are overwritten.
    :param parameters: the outer and the inner parameter.
    :param beta: overrides the computed derivative bound.
    :param options: solver settings.
    :param workers: number of worker processes, 1 solves in-process.
    :param console: a rich console for progress.
    :return:
    """
    if beta is None:
        beta = beta_bounds(model).beta
    values_a = grid_values(parameters[0])
    values_b = grid_values(parameters[1])
    cells = [
        (model, parameters, (a, b), beta, options) for a in values_a for b in values_b
    ]

    def progress(results: Iterable) -> Iterable:
        if console is None:
            return results
        return track(
            results,
            total=len(cells),
            description="[dim cyan](Sweeping..)",
            transient=True,
            console=console,
        )

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            flat = list(progress(executor.map(_sweep_cell, cells, chunksize=8)))
    else:
        flat = list(progress(map(_sweep_cell, cells)))
    nb = len(values_b)
    statuses = [flat[ia * nb : (ia + 1) * nb] for ia in range(len(values_a))]
    return RegionSweep(parameters, values_a, values_b, statuses)


def region_table(region: RegionSweep) -> pd.DataFrame:
    """One row per cell in grid order, columns `a,b,theorem1,corollary1`."""
    rows = [
        (a, b, *(status.value for status in region.statuses[ia][ib]))
        for ia, a in enumerate(region.values_a)
        for ib, b in enumerate(region.values_b)
    ]
    return pd.DataFrame(rows, columns=["a", "b", *METHODS])


def region_counts(region: RegionSweep) -> dict[str, dict[str, int]]:
    table = region_table(region)
    return {
        method: {s.value: int((table[method] == s.value).sum()) for s in CellStatus}
        for method in METHODS
    }
