import numpy as np
from rich.console import Console

from itsfuzz.errors import InitInfeasible
from itsfuzz.errors import InvalidModel
from itsfuzz.errors import NumericalFailure
from itsfuzz.errors import SolverFailure
from itsfuzz.lmi import LinearForm
from itsfuzz.lmi import MatExpr
from itsfuzz.lmi import Pattern
from itsfuzz.lmi import SDPProblem
from itsfuzz.lmi import total
from itsfuzz.lmi.solver import solve
from itsfuzz.stability import aliased_blocks
from itsfuzz.stability import build_theorem2
from itsfuzz.stability import check_certificate
from itsfuzz.stability import extract_line_integral
from itsfuzz.stability import line_integral_structure
from itsfuzz.tsmodel import validate
from itsfuzz.types import AnalysisResult
from itsfuzz.types import CCLPoint
from itsfuzz.types import SolverOptions
from itsfuzz.types import SynthesisProblem
from itsfuzz.types import SynthesisResult
from itsfuzz.types import SynthesisStatus
from itsfuzz.types import TraceRow
from itsfuzz.types import TSModel


def build_ccl_constraints(problem: SynthesisProblem) -> SDPProblem:
    """The constraint system of the gain design, with a zero objective.

    Besides the line-integral structure (Pbar, pool, D) it registers the
    inverse surrogates Pbar_k and Dbar, the decoupling matrices Omega_j, the
    changes of variable M_j = K_j Omega_j and the slacks R_ijk, Q_ijk."""
    model, beta = problem.model, problem.beta
    s, n, p = model.s, model.n, model.p
    sdp = SDPProblem(problem.solver.eps)
    pbar, _, cap, rules = line_integral_structure(sdp, model)
    cap_inv = sdp.var("Dbar", Pattern.DIAGONAL, n)
    surrogates = [sdp.var(f"Pbar[{k + 1}]", Pattern.FULL_SYMMETRIC, n) for k in range(s)]
    omegas = [sdp.var(f"Omega[{j + 1}]", Pattern.FULL, n) for j in range(s)]
    ms = [sdp.var(f"M[{j + 1}]", Pattern.FULL, p, cols=n) for j in range(s)]
    eye = np.eye(n)

    for j, dj in enumerate(rules):
        sdp.constrain(f"D - D{j + 1} >= 0", cap - dj, strict=False)
    for k, dk in enumerate(rules):
        sdp.constrain(f"P{k + 1} > 0", pbar + dk)
    for k, dk in enumerate(rules):
        sdp.constrain(
            f"[Pbar{k + 1}, I; I, P{k + 1}] >= 0",
            MatExpr.block([[surrogates[k], eye], [eye, dk + pbar]]),
            strict=False,
        )
    qs = [aliased_blocks(sdp, "Q", s, n, suffix=(k,)) for k in range(s)]
    for k in range(s):
        theta = MatExpr.block([[qs[k][(i, j)] for j in range(s)] for i in range(s)])
        sdp.constrain(f"Theta{k + 1} > 0", theta)
    sdp.constrain("[Dbar, I; I, D] >= 0", MatExpr.block([[cap_inv, eye], [eye, cap]]), strict=False)

    for i in range(s):
        for j in range(s):
            upsilon = model.A[i] @ omegas[j] + model.B[i] @ ms[j]
            for k in range(s):
                r = sdp.var(f"R[{i + 1},{j + 1},{k + 1}]", Pattern.FULL_SYMMETRIC, n)
                xc = surrogates[k] @ model.C[i].T
                coupling = surrogates[k] - omegas[j]
                rows = [
                    [upsilon.sym() + r + qs[k][(i, j)], upsilon, None, xc],
                    [upsilon.T, -omegas[j].sym(), coupling, None],
                    [None, coupling.T, -r, None],
                    [xc.T, None, None, -surrogates[k]],
                ]
                if beta > 0:
                    for row in rows:
                        row.append(None)
                    rows[0][-1] = xc
                    rows.append([xc.T, None, None, None, -(1.0 / beta) * cap_inv.expr])
                sdp.constrain(f"LMI[{i + 1},{j + 1},{k + 1}] < 0", -MatExpr.block(rows))
                sdp.constrain(f"R[{i + 1},{j + 1},{k + 1}] > 0", r)
    return sdp


def _couplings(sdp: SDPProblem, model: TSModel):
    """Pairs (X, Y) whose complementarity X Y = I the iteration drives."""
    vs = sdp.variables
    pool = vs["d"]
    pairs = [
        (vs[f"Pbar[{k + 1}]"], pool.at(alpha) + vs["Pbar"])
        for k, alpha in enumerate(model.ordinals.tolist())
    ]
    pairs.append((vs["Dbar"], vs["D"].expr))
    return pairs


def _as_value(item, values: np.ndarray) -> np.ndarray:
    return item.value(values) if hasattr(item, "value") else item.evaluate(values)


def ccl_objective(sdp: SDPProblem, model: TSModel, values: np.ndarray) -> float:
    """sum_k tr[Pbar_k (D_k + Pbar)] + tr(Dbar D) at `values`."""
    return float(
        sum(
            np.trace(_as_value(x, values) @ _as_value(y, values))
            for x, y in _couplings(sdp, model)
        )
    )


def ccl_error(sdp: SDPProblem, model: TSModel, values: np.ndarray) -> float:
    return ccl_objective(sdp, model, values) - (model.s + 1) * model.n


def linearized_objective(sdp: SDPProblem, model: TSModel, values: np.ndarray) -> LinearForm:
    """sum_k tr[Pbar_kj (D_k + Pbar) + Pbar_k (D_kj + Pbar(j))] + tr(Dbar_j D + Dbar D(j)),
    the linearization of twice the objective at `values`."""
    forms = []
    for x, y in _couplings(sdp, model):
        x_expr = x if isinstance(x, MatExpr) else x.expr
        y_expr = y if isinstance(y, MatExpr) else y.expr
        forms.append(y_expr.inner(_as_value(x, values)))
        forms.append(x_expr.inner(_as_value(y, values)))
    return total(forms)


def complementarity_residuals(sdp: SDPProblem, model: TSModel, values: np.ndarray) -> list[float]:
    """Frobenius norms of X Y - I for every coupled pair."""
    return [
        float(np.linalg.norm(_as_value(x, values) @ _as_value(y, values) - np.eye(model.n)))
        for x, y in _couplings(sdp, model)
    ]


def ccl_initialize(problem: SynthesisProblem, sdp: SDPProblem | None = None) -> CCLPoint:
    """A feasible point I_0 of the constraint system with its error E_0."""
    sdp = build_ccl_constraints(problem) if sdp is None else sdp
    solution = solve(sdp, problem.solver)
    if not solution.status.ok:
        raise InitInfeasible(f"Constraint system not solved ({solution.status.value}).")
    objective = ccl_objective(sdp, problem.model, solution.values)
    return CCLPoint(
        solution.values,
        objective - (problem.model.s + 1) * problem.model.n,
        2 * objective,
    )


def ccl_step(problem: SynthesisProblem, sdp: SDPProblem, point: CCLPoint) -> CCLPoint:
    """Minimizes the objective linearized at `point` over the constraint system.
    The returned objective is the optimal linearized value."""
    step = sdp.copy_with_objective(linearized_objective(sdp, problem.model, point.values))
    solution = solve(step, problem.solver)
    if not solution.status.ok:
        raise SolverFailure(f"Linearized problem not solved ({solution.status.value}).")
    return CCLPoint(
        solution.values,
        ccl_error(sdp, problem.model, solution.values),
        solution.objective,
    )


def extract_gains(
    sdp: SDPProblem, model: TSModel, values: np.ndarray, omega_tol: float = 1e-9
) -> np.ndarray:
    """K_j = M_j Omega_j^-1, shape (s, p, n)."""
    gains = []
    for j in range(model.s):
        omega = sdp.variables[f"Omega[{j + 1}]"].value(values)
        m = sdp.variables[f"M[{j + 1}]"].value(values)
        if np.linalg.svd(omega, compute_uv=False)[-1] < omega_tol:
            raise NumericalFailure(f"Omega{j + 1} is almost singular.")
        gains.append(np.linalg.solve(omega.T, m.T).T)
    return np.array(gains).reshape(model.s, model.p, model.n)


def result_matrices(sdp: SDPProblem, model: TSModel, values: np.ndarray) -> dict[str, np.ndarray]:
    """Every matrix variable at `values`, the shared pool listed per dimension."""
    out = {}
    for name, var in sdp.variables.items():
        if var.pool is not None:
            for j, size in enumerate(model.sizes):
                out[f"d[{j + 1}]"] = np.array([values[var.pool[(j, rho)]] for rho in range(1, size + 1)])
            continue
        out[name] = var.value(values)
    return out


def synthesize(problem: SynthesisProblem, console: Console | None = None) -> SynthesisResult:
    """Runs the cone complementarity iteration until |E_j| < eps_ccl or
    n_max steps, then extracts the gains.

    :param problem: model, beta and options.
    :param console: a rich console for writing.
    :return:
    """
    log = console.log if console is not None else (lambda _: None)
    model, options = problem.model, problem.options
    if errors := validate(model).errors(line_integral=True):
        raise InvalidModel(errors)
    if model.p == 0:
        raise ValueError("Gain design needs an input matrix B.")

    sdp = build_ccl_constraints(problem)
    log(
        f"Built [b]{len(sdp.constraints)}[/] constraints "
        f"over [b]{len(sdp.space)}[/] scalar variables."
    )
    try:
        point = ccl_initialize(problem, sdp)
    except InitInfeasible as error:
        log(f"[red]Initialization failed.[/] {error}")
        return SynthesisResult(SynthesisStatus.INIT_INFEASIBLE, None, {}, [], str(error))
    trace = [TraceRow(0, point.objective, point.error)]
    log(f"[dim]Iteration 0, objective {point.objective:.8f}, E = {point.error:.3e}[/]")

    status = SynthesisStatus.MAX_ITERATIONS
    message = ""
    iteration = 0
    while abs(point.error) >= options.eps_ccl and iteration < options.n_max:
        iteration += 1
        try:
            point = ccl_step(problem, sdp, point)
        except SolverFailure as error:
            status, message = SynthesisStatus.SOLVER_FAILURE, str(error)
            log(f"[red]Iteration {iteration} failed.[/] {error}")
            break
        trace.append(TraceRow(iteration, point.objective, point.error))
        log(f"[dim]Iteration {iteration}, objective {point.objective:.8f}, E = {point.error:.3e}[/]")
    if abs(point.error) < options.eps_ccl:
        status = SynthesisStatus.CONVERGED
        residual = max(complementarity_residuals(sdp, model, point.values))
        if residual > options.c * np.sqrt(options.eps_ccl):
            status = SynthesisStatus.NUMERICAL_FAILURE
            message = f"Complementarity residual {residual:.3e} despite |E| < eps_ccl."
            log(f"[red]{message}[/]")

    matrices = result_matrices(sdp, model, point.values)
    try:
        gains = extract_gains(sdp, model, point.values, options.omega_tol)
    except NumericalFailure as error:
        return SynthesisResult(SynthesisStatus.NUMERICAL_FAILURE, None, matrices, trace, str(error))
    return SynthesisResult(status, gains, matrices, trace, message)


def verify_closed_loop(
    model: TSModel,
    gains: np.ndarray,
    beta: float,
    options: SolverOptions = SolverOptions(),
) -> AnalysisResult:
    """Certifies the loop closed by `gains` through the closed-loop
    line-integral conditions, independently of how the gains were found.
    The certificate carries the gains."""
    if errors := validate(model).errors(line_integral=True):
        raise InvalidModel(errors)
    sdp = build_theorem2(model, gains, beta, options.eps)
    solution = solve(sdp, options)
    if not solution.status.ok:
        return AnalysisResult("theorem2", solution.status, None, solution, [])
    certificate = extract_line_integral(sdp, model, solution.values, beta, gains)
    failures = check_certificate(model, certificate, options.tol_feas)
    return AnalysisResult("theorem2", solution.status, certificate, solution, failures)
