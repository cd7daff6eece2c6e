import numpy as np
import pandas as pd
from rich.console import Console
from scipy.integrate import quad

from itsfuzz.errors import BoundViolated
from itsfuzz.errors import InvalidModel
from itsfuzz.errors import PreconditionViolated
from itsfuzz.stability import rule_diagonals
from itsfuzz.stability import rule_matrices
from itsfuzz.tsmodel import basis
from itsfuzz.tsmodel import basis_jacobian
from itsfuzz.tsmodel import closed_loop
from itsfuzz.tsmodel import normalize
from itsfuzz.tsmodel import validate
from itsfuzz.types import HessianReport
from itsfuzz.types import LineIntegralCertificate
from itsfuzz.types import SuiteResult
from itsfuzz.types import TSModel

QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-12
QUAD_LIMIT = 200
BOUND_SLACK = 1e-9
PRECONDITION_TOL = 1e-7
# derivative checks sample states with norm up to this radius, where the
# memberships actually vary
SUITE_RADIUS = 10.0


class LyapunovEvaluator:
    """Evaluates the line-integral function V(x) = 2 int_0^x fbar(psi)^T dpsi,
    fbar(psi) = sum_i h_i(psi) P_i psi, of a certificate, together with its
    derivatives and the generator bounds it guarantees.

    Args:
        model: a full-combination model.
        certificate: the matrices P-bar, d_jj^rho and D.
    """

    def __init__(self, model: TSModel, certificate: LineIntegralCertificate):
        report = validate(model)
        if errors := report.errors(line_integral=True):
            raise InvalidModel(errors)
        if not np.array_equal(certificate.ordinals, model.ordinals):
            raise ValueError("Certificate and model rule bases differ.")
        self.model = model
        self.certificate = certificate
        self.P = rule_matrices(certificate)
        self.diagonals = np.array([np.diag(d) for d in rule_diagonals(certificate)])
        self.beta = certificate.beta
        self.gains = certificate.gains

    def __str__(self):
        return f"LyapunovEvaluator(n={self.model.n}, s={self.model.s}, beta={self.beta})"

    def sigma(self, j: int, t: float | np.ndarray) -> np.ndarray:
        """sigma_j(t) = sum_rho mu_j^rho(t) d_jj^rho, the aggregated diagonal."""
        mu = normalize(self.model.families[j], t)
        return np.tensordot(self.certificate.pool[j], mu, axes=1)

    def P_of(self, x: np.ndarray) -> np.ndarray:
        """P(x) = sum_i h_i(x) P_i, shape (n, n) or (N, n, n)."""
        h = basis(self.model, x)
        return np.tensordot(h, self.P, axes=1)

    def eval_V(self, x: np.ndarray) -> float:
        """x^T P-bar x + 2 sum_j int_0^{x_j} sigma_j(t) t dt, the closed form
        taken by the line integral on a full-combination rule base."""
        x = np.asarray(x, dtype=float)
        value = float(x @ self.certificate.pbar @ x)
        for j, xj in enumerate(x):
            if xj == 0.0:
                continue
            integral, _ = quad(
                lambda t: float(self.sigma(j, t)) * t,
                0.0,
                xj,
                epsabs=QUAD_EPSABS,
                epsrel=QUAD_EPSREL,
                limit=QUAD_LIMIT,
            )
            value += 2 * integral
        return value

    def eval_V_line(self, x: np.ndarray) -> float:
        """V along the straight path t -> t x, t in [0, 1]."""
        x = np.asarray(x, dtype=float)
        if not np.any(x):
            return 0.0
        integral, _ = quad(
            lambda t: t * float(x @ self.P_of(t * x) @ x),
            0.0,
            1.0,
            epsabs=QUAD_EPSABS,
            epsrel=QUAD_EPSREL,
            limit=QUAD_LIMIT,
        )
        return 2 * integral

    def grad_V(self, x: np.ndarray) -> np.ndarray:
        """The row gradient 2 x^T P(x)."""
        x = np.asarray(x, dtype=float)
        return 2 * x @ self.P_of(x)

    def hessian_V(self, x: np.ndarray) -> np.ndarray:
        """2 (P(x) + sum_i dh_i/dx x^T D_i). Its quadratic forms are those of
        the Hessian, whose symmetric part it shares."""
        x = np.asarray(x, dtype=float)
        jac = basis_jacobian(self.model, x)
        correction = np.einsum("ia,b,ib->ab", jac, x, self.diagonals)
        return 2 * (self.P_of(x) + correction)

    def check_hessian_bound(
        self, samples: int = 10_000, seed: int = 0, raise_on_violation: bool = True
    ) -> HessianReport:
        """Samples pairs (x, y) from the working box times the unit sphere and
        compares y^T (P(x) + sum_i dh_i/dx x^T D_i) y with y^T (P(x) + beta D) y."""
        if failures := preconditions(self):
            raise PreconditionViolated("; ".join(failures))
        rng = np.random.default_rng(seed)
        n = self.model.n
        xs = rng.uniform(-self.model.box, self.model.box, size=(samples, n))
        ys = rng.standard_normal(size=(samples, n))
        ys /= np.linalg.norm(ys, axis=1, keepdims=True)
        jac = basis_jacobian(self.model, xs)
        # P(x) cancels between the two sides
        lhs = np.einsum(
            "ni,ni->n",
            np.einsum("nia,na->ni", jac, ys),
            np.einsum("nb,nb,ib->ni", ys, xs, self.diagonals),
        )
        rhs = self.beta * np.einsum("na,ab,nb->n", ys, self.certificate.D, ys)
        gap = lhs - rhs
        worst = int(np.argmax(gap))
        report = HessianReport(float(gap[worst]), xs[worst], ys[worst], samples)
        if raise_on_violation and report.max_violation > BOUND_SLACK:
            raise BoundViolated(report)
        return report

    def _bound_matrices(self, gains: np.ndarray | None) -> np.ndarray:
        m = self.model
        cap = self.beta * self.certificate.D
        if gains is None:
            pa = np.einsum("jab,ibc->ijac", self.P, m.A)
            diffusion = np.einsum("iba,jbc,icd->ijad", m.C, self.P + cap, m.C)
            return pa + pa.transpose(0, 1, 3, 2) + diffusion
        vertices = closed_loop(m, gains).vertices
        pa = np.einsum("kab,ijbc->ijkac", self.P, vertices)
        diffusion = np.einsum("iba,kbc,icd->ikad", m.C, self.P + cap, m.C)
        return pa + pa.transpose(0, 1, 2, 4, 3) + diffusion[:, None]

    def sample_generator(self, x: np.ndarray, gains: np.ndarray | None = None) -> np.ndarray:
        """The certified upper bound on the generator of V,
        sum_ij h_i h_j x^T [(P_j A_i)^S + C_i^T (P_j + beta D) C_i] x, or its
        closed-loop triple sum with A_ij and P_k. Accepts a batch of states."""
        gains = self.gains if gains is None else gains
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        h = basis(self.model, xs)
        forms = np.einsum("na,...ab,nb->n...", xs, self._bound_matrices(gains), xs)
        if gains is None:
            out = np.einsum("ni,nj,nij->n", h, h, forms)
        else:
            out = np.einsum("ni,nj,nk,nijk->n", h, h, h, forms)
        return out[0] if np.ndim(x) == 1 else out

    def exact_generator(self, x: np.ndarray, gains: np.ndarray | None = None) -> float:
        """grad V f(x) + g(x)^T Hess V g(x) / 2, for diagnostics only."""
        gains = self.gains if gains is None else gains
        x = np.asarray(x, dtype=float)
        h = basis(self.model, x)
        if gains is None:
            drift = np.einsum("i,iab,b->a", h, self.model.A, x)
        else:
            vertices = closed_loop(self.model, gains).vertices
            drift = np.einsum("i,j,ijab,b->a", h, h, vertices, x)
        diffusion = np.einsum("i,iab,b->a", h, self.model.C, x)
        return float(self.grad_V(x) @ drift + 0.5 * diffusion @ self.hessian_V(x) @ diffusion)


def preconditions(ev: LyapunovEvaluator) -> list[str]:
    """Violations of P_k > 0 and D - D_k >= 0."""
    failures = []
    cap = ev.certificate.D
    for k, (pk, dk) in enumerate(zip(ev.P, ev.diagonals)):
        if np.linalg.eigvalsh(pk)[0] <= 0:
            failures.append(f"P{k + 1} > 0")
        if np.linalg.eigvalsh(cap - np.diag(dk))[0] < -PRECONDITION_TOL:
            failures.append(f"D - D{k + 1} >= 0")
    return failures


def _nonzero_states(rng: np.random.Generator, samples: int, n: int, radius: float):
    xs = rng.uniform(-radius, radius, size=(samples, n))
    xs[~np.any(xs, axis=1)] = radius / 2
    return xs


def sample_report(
    ev: LyapunovEvaluator,
    samples: int = 1000,
    seed: int = 0,
    gains: np.ndarray | None = None,
) -> pd.DataFrame:
    """V and the generator bound at random nonzero states of the working box."""
    rng = np.random.default_rng(seed)
    n = ev.model.n
    xs = _nonzero_states(rng, samples, n, ev.model.box)
    table = pd.DataFrame(xs, columns=[f"x_{j + 1}" for j in range(n)])
    table["V"] = [ev.eval_V(x) for x in xs]
    table["LV_bound"] = ev.sample_generator(xs, gains)
    return table


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def suite_precondition(ev: LyapunovEvaluator, **_) -> SuiteResult:
    failures = preconditions(ev)
    worst = min(
        min(np.linalg.eigvalsh(ev.certificate.D - np.diag(dk))[0] for dk in ev.diagonals),
        min(np.linalg.eigvalsh(pk)[0] for pk in ev.P),
    )
    detail = "violated: " + ", ".join(failures) if failures else "P_k > 0, D - D_k >= 0"
    return SuiteResult("precondition", not failures, float(worst), detail)


def suite_path_independence(ev: LyapunovEvaluator, rng, points: int = 100, **_) -> SuiteResult:
    xs = _nonzero_states(rng, points, ev.model.n, min(ev.model.box, SUITE_RADIUS))
    worst = max(
        abs(ev.eval_V(x) - (v := ev.eval_V_line(x))) / max(abs(v), 1e-300) for x in xs
    )
    return SuiteResult(
        "path_independence", worst <= 1e-8, worst, "axis-wise vs straight line quadrature"
    )


def suite_gradient(ev: LyapunovEvaluator, rng, points: int = 100, **_) -> SuiteResult:
    xs = _nonzero_states(rng, points, ev.model.n, min(ev.model.box, SUITE_RADIUS))
    worst = 0.0
    for x in xs:
        step = 1e-4 * max(1.0, float(np.linalg.norm(x)))
        fd = np.array(
            [
                (ev.eval_V(x + step * e) - ev.eval_V(x - step * e)) / (2 * step)
                for e in np.eye(ev.model.n)
            ]
        )
        worst = max(worst, _relative(fd, ev.grad_V(x)))
    return SuiteResult("gradient", worst <= 1e-6, worst, "central differences of V")


def suite_hessian(ev: LyapunovEvaluator, rng, points: int = 100, **_) -> SuiteResult:
    xs = _nonzero_states(rng, points, ev.model.n, min(ev.model.box, SUITE_RADIUS))
    worst = 0.0
    for x in xs:
        step = 1e-5 * max(1.0, float(np.linalg.norm(x)))
        fd = np.array(
            [
                (ev.grad_V(x + step * e) - ev.grad_V(x - step * e)) / (2 * step)
                for e in np.eye(ev.model.n)
            ]
        )
        hessian = ev.hessian_V(x)
        worst = max(worst, _relative((fd + fd.T) / 2, (hessian + hessian.T) / 2))
    return SuiteResult("hessian", worst <= 1e-5, worst, "central differences of the gradient")


def suite_hessian_bound(ev: LyapunovEvaluator, samples: int = 10_000, seed: int = 0, **_) -> SuiteResult:
    report = ev.check_hessian_bound(samples, seed, raise_on_violation=False)
    return SuiteResult(
        "hessian_bound",
        report.max_violation <= BOUND_SLACK,
        report.max_violation,
        f"worst at x={np.round(report.x, 4).tolist()}",
    )


def suite_generator(ev: LyapunovEvaluator, rng, samples: int = 10_000, **_) -> SuiteResult:
    xs = _nonzero_states(rng, samples, ev.model.n, ev.model.box)
    bound = ev.sample_generator(xs)
    # scale free: the bound is a quadratic form
    worst = float(np.max(bound / np.sum(xs**2, axis=1)))
    return SuiteResult("generator", worst < 0, worst, "largest LV bound / |x|^2")


def suite_fact2(ev: LyapunovEvaluator, rng, points: int = 100, **_) -> SuiteResult | None:
    """Quadratic degeneracy, only meaningful when every P_k coincides."""
    if not np.allclose(ev.P, ev.P[0], rtol=0, atol=1e-14):
        return None
    xs = _nonzero_states(rng, points, ev.model.n, min(ev.model.box, SUITE_RADIUS))
    worst = max(abs(ev.eval_V(x) - float(x @ ev.P[0] @ x)) for x in xs)
    return SuiteResult("fact2", worst <= 1e-10, worst, "V(x) = x^T P x")


SUITES = (
    suite_path_independence,
    suite_gradient,
    suite_hessian,
    suite_hessian_bound,
    suite_generator,
    suite_fact2,
)


def verify(
    ev: LyapunovEvaluator,
    samples: int = 10_000,
    seed: int = 0,
    console: Console | None = None,
) -> list[SuiteResult]:
    """Runs every verification suite, stopping after the precondition
    suite when it fails."""
    log = console.log if console is not None else (lambda _: None)
    results = [suite_precondition(ev)]
    log(_fmt(results[-1]))
    if not results[-1].passed:
        return results
    rng = np.random.default_rng(seed)
    for suite in SUITES:
        result = suite(ev, rng=rng, samples=samples, seed=seed)
        if result is None:
            continue
        results.append(result)
        log(_fmt(result))
    return results


def _fmt(result: SuiteResult) -> str:
    mark = "[green]pass[/]" if result.passed else "[red]fail[/]"
    return f"Suite [b]{result.name}[/] {mark} [dim](worst {result.worst:.3e}, {result.detail})[/]"
