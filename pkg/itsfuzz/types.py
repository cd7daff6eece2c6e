from enum import Enum
from typing import Callable, NamedTuple

import numpy as np

# rule ordinals are 1-based, like the fuzzy set superscripts they index
Ordinals = tuple[int, ...]
# a (j, rho) pair keying the shared diagonal pool: dimension j (0-based), ordinal rho
PoolKey = tuple[int, int]


class Gaussian(NamedTuple):
    """A Gaussian bump grade `c * exp(-a * (x - m)**2)`."""

    c: float
    a: float
    m: float = 0.0


class Complement(NamedTuple):
    """One minus the sum of the non-complement grades of the same family."""


class Custom(NamedTuple):
    """Any differentiable grade. Without `deriv`, derivatives are central
    differences and beta bounds are always computed on a grid."""

    func: Callable
    deriv: Callable | None = None


Grade = Gaussian | Complement | Custom


class MembershipFamily(NamedTuple):
    """The fuzzy sets w_j^1, .., w_j^{s_j} built on state dimension `dimension`."""

    dimension: int
    grades: tuple[Grade, ...]

    @property
    def size(self) -> int:
        return len(self.grades)


class TSModel(NamedTuple):
    """An Ito stochastic T-S model.

    `ordinals` is an (s, n) integer array of 1-based fuzzy set indexes,
    `A`, `B`, `C` are stacked per rule with shapes (s, n, n), (s, n, p), (s, n, n).
    Bounds and samples are taken over the box [-box, box]^n."""

    ordinals: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    families: tuple[MembershipFamily, ...]
    box: float = 50.0

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def p(self) -> int:
        return self.B.shape[2]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(f.size for f in self.families)


class ClosedLoopModel(NamedTuple):
    """A model under the fuzzy state feedback u = sum_j h_j K_j x.
    `vertices[i, j]` holds A_ij = A_i + B_i K_j."""

    model: TSModel
    gains: np.ndarray
    vertices: np.ndarray


class Violation(NamedTuple):
    kind: str
    message: str


class ValidationReport(NamedTuple):
    violations: list[Violation]
    full_combination: bool

    def errors(self, line_integral: bool = True) -> list[Violation]:
        """Violations that matter for the chosen mode. Quadratic mode accepts
        any rule base, line integral mode requires a full combination."""
        return [
            v
            for v in self.violations
            if line_integral or v.kind != "incomplete rule base"
        ]


class BetaBounds(NamedTuple):
    """Upper bounds beta_ij >= sup |x_j d/dx_j mu_j^{alpha_ij}(x_j)|.
    `raw` holds the computed suprema, `entries` the reported (rounded-up) bounds."""

    entries: np.ndarray
    raw: np.ndarray
    methods: tuple[tuple[str, ...], ...]
    beta: float


class SolverStatus(Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"

    @property
    def ok(self) -> bool:
        return self in (SolverStatus.OPTIMAL, SolverStatus.FEASIBLE)


class SolverOptions(NamedTuple):
    eps: float = 1e-6
    tol_feas: float = 1e-7
    tol_gap: float = 1e-8
    max_iter: int = 100


class Solution(NamedTuple):
    status: SolverStatus
    values: np.ndarray | None
    violation: float
    objective: float
    iterations: int = 0
    message: str = ""


class ConstraintCheck(NamedTuple):
    """Smallest eigenvalue of F(x) - margin * I for one constraint."""

    name: str
    min_eig: float
    passed: bool


class LineIntegralCertificate(NamedTuple):
    """Matrices proving the line integral conditions.

    `pool[j][rho - 1]` is d_jj^rho, `q` maps (i, j) (open loop) or (i, j, k)
    (closed loop) 0-based index tuples to the slack blocks, with the
    symmetric index pairs both present."""

    kind: str
    ordinals: np.ndarray
    pbar: np.ndarray
    pool: tuple[np.ndarray, ...]
    D: np.ndarray
    q: dict[tuple[int, ...], np.ndarray]
    beta: float
    gains: np.ndarray | None = None


class QuadraticCertificate(NamedTuple):
    P: np.ndarray
    q: tuple[np.ndarray, ...]


class AnalysisResult(NamedTuple):
    method: str
    status: SolverStatus
    certificate: LineIntegralCertificate | QuadraticCertificate | None
    solution: Solution
    failures: list[str]

    @property
    def feasible(self) -> bool:
        return self.status.ok and self.certificate is not None and not self.failures


class SweepParameter(NamedTuple):
    """A scalar slot `matrix[rule][row, col]` (all 0-based) swept over a range."""

    name: str
    matrix: str
    rule: int
    row: int
    col: int
    start: float
    stop: float
    step: float


class CellStatus(Enum):
    FEASIBLE = "F"
    INFEASIBLE = "I"
    FAILURE = "X"


class RegionSweep(NamedTuple):
    """Statuses over a two-parameter grid, `statuses[ia, ib]` holding the
    (theorem1, corollary1) pair for cell (values_a[ia], values_b[ib])."""

    parameters: tuple[SweepParameter, SweepParameter]
    values_a: np.ndarray
    values_b: np.ndarray
    statuses: list[list[tuple[CellStatus, CellStatus]]]


class SynthesisStatus(Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    INIT_INFEASIBLE = "InitInfeasible"
    SOLVER_FAILURE = "SolverFailure"
    NUMERICAL_FAILURE = "NumericalFailure"


class SynthesisOptions(NamedTuple):
    eps_ccl: float = 1e-4
    n_max: int = 50
    omega_tol: float = 1e-9
    # constant of the complementarity residual bound c * sqrt(eps_ccl)
    c: float = 10.0


class SynthesisProblem(NamedTuple):
    model: TSModel
    beta: float
    options: SynthesisOptions = SynthesisOptions()
    solver: SolverOptions = SolverOptions()


class TraceRow(NamedTuple):
    iteration: int
    objective: float
    error: float


class CCLPoint(NamedTuple):
    """A point I_j of the cone complementarity iteration."""

    values: np.ndarray
    error: float
    objective: float


class SynthesisResult(NamedTuple):
    status: SynthesisStatus
    gains: np.ndarray | None
    matrices: dict[str, np.ndarray]
    trace: list[TraceRow]
    message: str = ""


class SimConfig(NamedTuple):
    """Euler-Maruyama settings: N base Wiener increments of variance T/N,
    integrated with step R*T/N."""

    initial_states: np.ndarray
    horizon: float = 15.0
    steps: int = 2**8
    coarsening: int = 2
    paths: int = 1
    seed: int = 0
    gains: np.ndarray | None = None
    blowup: float = 1e12


class Trajectory(NamedTuple):
    t: np.ndarray
    x: np.ndarray
    blowup: bool


class SimEnsemble(NamedTuple):
    """`paths[s, m]` is the (K+1, n) trajectory of path m from initial state s,
    `means[s]` the mean over the paths still running at each time."""

    t: np.ndarray
    paths: np.ndarray
    means: np.ndarray
    blowups: np.ndarray
    config: SimConfig


class HessianReport(NamedTuple):
    """Largest value of y^T (sum_i dh_i/dx x^T D_i) y - beta y^T D y over the
    samples, with the witnessing pair."""

    max_violation: float
    x: np.ndarray
    y: np.ndarray
    samples: int


class SuiteResult(NamedTuple):
    name: str
    passed: bool
    worst: float
    detail: str
