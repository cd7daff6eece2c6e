from itertools import product
from math import ceil
from math import exp
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from itsfuzz.errors import DegenerateDenominator
from itsfuzz.errors import DimensionMismatch
from itsfuzz.errors import UnboundedDerivative
from itsfuzz.types import BetaBounds
from itsfuzz.types import ClosedLoopModel
from itsfuzz.types import Complement
from itsfuzz.types import Custom
from itsfuzz.types import Gaussian
from itsfuzz.types import MembershipFamily
from itsfuzz.types import SweepParameter
from itsfuzz.types import TSModel
from itsfuzz.types import ValidationReport
from itsfuzz.types import Violation

DENOMINATOR_FLOOR = 1e-300
GRID_POINTS = 20_001
PARTITION_SAMPLES = 1000
PARTITION_TOL = 1e-12
BETA_DECIMALS = 4
BETA_FLOOR = 1e-4


def build_model(
    ordinals: Sequence[Sequence[int]],
    A: Sequence,
    families: Iterable[MembershipFamily],
    B: Sequence | None = None,
    C: Sequence | None = None,
    box: float = 50.0,
) -> TSModel:
    """Stacks per-rule matrices into a TSModel. Missing B means an unforced
    model (p = 0), missing C means no diffusion."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 3:
        raise DimensionMismatch("`A` must stack one square matrix per rule.")
    s, n, _ = A.shape
    B = np.zeros((s, n, 0)) if B is None else np.asarray(B, dtype=float)
    if B.ndim == 2:
        # single input, one column per rule
        B = B[:, :, None]
    C = np.zeros((s, n, n)) if C is None else np.asarray(C, dtype=float)
    return TSModel(
        ordinals=np.asarray(ordinals, dtype=int),
        A=A,
        B=B,
        C=C,
        families=tuple(families),
        box=float(box),
    )


def _custom_values(grade: Custom, x: np.ndarray) -> np.ndarray:
    return np.asarray(np.vectorize(grade.func, otypes=[float])(x), dtype=float)


def _custom_derivative(grade: Custom, x: np.ndarray) -> np.ndarray:
    if grade.deriv is not None:
        return np.asarray(np.vectorize(grade.deriv, otypes=[float])(x), dtype=float)
    h = 1e-6 * np.maximum(1.0, np.abs(x))
    return (_custom_values(grade, x + h) - _custom_values(grade, x - h)) / (2 * h)


def _raw_grades(family: MembershipFamily, x: np.ndarray) -> np.ndarray:
    """Values w_j^rho(x), shape (s_j, *x.shape)."""
    out = np.empty((family.size, *x.shape))
    complements = []
    for rho, grade in enumerate(family.grades):
        match grade:
            case Gaussian(c, a, m):
                out[rho] = c * np.exp(-a * (x - m) ** 2)
            case Custom():
                out[rho] = _custom_values(grade, x)
            case Complement():
                complements.append(rho)
    others = [r for r in range(family.size) if r not in complements]
    for rho in complements:
        out[rho] = 1.0 - out[others].sum(axis=0)
    return out


def _raw_derivatives(family: MembershipFamily, x: np.ndarray) -> np.ndarray:
    out = np.empty((family.size, *x.shape))
    complements = []
    for rho, grade in enumerate(family.grades):
        match grade:
            case Gaussian(c, a, m):
                out[rho] = -2 * a * (x - m) * c * np.exp(-a * (x - m) ** 2)
            case Custom():
                out[rho] = _custom_derivative(grade, x)
            case Complement():
                complements.append(rho)
    others = [r for r in range(family.size) if r not in complements]
    for rho in complements:
        out[rho] = -out[others].sum(axis=0)
    return out


def _denominator(w: np.ndarray) -> np.ndarray:
    total = w.sum(axis=0)
    if np.any(total < DENOMINATOR_FLOOR):
        raise DegenerateDenominator(
            "Membership grades sum to zero, cannot normalize."
        )
    return total


def normalize(family: MembershipFamily, x_j: float | np.ndarray) -> np.ndarray:
    """Normalized grades mu_j^rho(x_j) = w_j^rho / sum_rho w_j^rho.
    Returns shape (s_j,) for a scalar input, (s_j, N) for N inputs."""
    x = np.asarray(x_j, dtype=float)
    w = _raw_grades(family, x)
    return w / _denominator(w)


def normalize_derivative(
    family: MembershipFamily, x_j: float | np.ndarray
) -> np.ndarray:
    """Derivatives d mu_j^rho / dx_j by the quotient rule."""
    x = np.asarray(x_j, dtype=float)
    w = _raw_grades(family, x)
    dw = _raw_derivatives(family, x)
    total = _denominator(w)
    dtotal = dw.sum(axis=0)
    return (dw * total - w * dtotal) / total**2


def selected_memberships(
    model: TSModel, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """The grades mu_j^{alpha_ij}(x_j) of every rule and their derivatives,
    shaped (N, s, n) for a batch of N states."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    if xs.shape[1] != model.n:
        raise DimensionMismatch(f"Expected states of size {model.n}.")
    nsamples = xs.shape[0]
    mu = np.empty((nsamples, model.s, model.n))
    dmu = np.empty((nsamples, model.s, model.n))
    for j, family in enumerate(model.families):
        values = normalize(family, xs[:, j])
        derivatives = normalize_derivative(family, xs[:, j])
        picks = model.ordinals[:, j] - 1
        mu[:, :, j] = values[picks].T
        dmu[:, :, j] = derivatives[picks].T
    return mu, dmu


def basis(model: TSModel, x: np.ndarray) -> np.ndarray:
    """Fuzzy basis h_i(x) = prod_j mu_j^{alpha_ij}(x_j).
    Shape (s,) for one state, (N, s) for a batch."""
    mu, _ = selected_memberships(model, x)
    h = mu.prod(axis=2)
    return h[0] if np.ndim(x) == 1 else h


def basis_jacobian(model: TSModel, x: np.ndarray) -> np.ndarray:
    """Entries dh_i/dx_j, shape (s, n) for one state, (N, s, n) for a batch."""
    mu, dmu = selected_memberships(model, x)
    jac = np.empty_like(mu)
    for j in range(model.n):
        jac[:, :, j] = np.delete(mu, j, axis=2).prod(axis=2) * dmu[:, :, j]
    return jac[0] if np.ndim(x) == 1 else jac


def _is_decaying(family: MembershipFamily) -> bool:
    return all(isinstance(g, Gaussian | Complement) for g in family.grades)


def _closed_form_pair(family: MembershipFamily) -> Gaussian | None:
    """The bump of a {centered Gaussian, complement} pair, for which
    |x dmu/dx| = 2 a c x^2 exp(-a x^2) for both ordinals."""
    if family.size != 2:
        return None
    bumps = [g for g in family.grades if isinstance(g, Gaussian)]
    complements = [g for g in family.grades if isinstance(g, Complement)]
    if len(bumps) == 1 and len(complements) == 1 and bumps[0].m == 0.0:
        return bumps[0]
    return None


def _closed_form_sup(bump: Gaussian, box: float) -> float:
    c, a, _ = bump
    x2 = min(1.0 / a, box**2)
    return 2 * a * c * x2 * exp(-a * x2)


def _grid_sup(family: MembershipFamily, rho: int, box: float) -> float:
    """Dense scan of |x dmu/dx| followed by bounded golden refinement."""

    def g(t):
        return np.abs(t * normalize_derivative(family, t)[rho])

    xs = np.linspace(-box, box, GRID_POINTS)
    values = g(xs)
    best = int(np.argmax(values))
    at_edge = best in (0, GRID_POINTS - 1)
    if at_edge and not _is_decaying(family):
        tail = values[-10:] if best else values[:10][::-1]
        if np.all(np.diff(tail) > 0):
            raise UnboundedDerivative(
                f"|x dmu/dx| of dimension {family.dimension + 1}, set {rho + 1} "
                f"grows up to the box edge {box}."
            )
    lo = xs[max(best - 1, 0)]
    hi = xs[min(best + 1, GRID_POINTS - 1)]
    res = minimize_scalar(
        lambda t: -float(g(np.asarray(t))),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return max(float(values[best]), -float(res.fun))


def round_up(value: float, decimals: int = BETA_DECIMALS) -> float:
    """Rounds up at the given decimal, e.g. 0.012434 -> 0.0125."""
    scale = 10**decimals
    return max(ceil(value * scale - 1e-9) / scale, BETA_FLOOR)


def family_suprema(
    family: MembershipFamily, box: float
) -> tuple[list[float], list[str]]:
    """Suprema of |x dmu_j^rho/dx| over [-box, box] for every ordinal rho."""
    if (bump := _closed_form_pair(family)) is not None:
        sup = _closed_form_sup(bump, box)
        return [sup] * family.size, ["closed-form"] * family.size
    sups = [_grid_sup(family, rho, box) for rho in range(family.size)]
    return sups, ["grid-refined"] * family.size


def beta_bounds(
    model: TSModel,
    envelope: str = "uniform",
    box: float | None = None,
) -> BetaBounds:
    """Bounds beta_ij on |x_j dh_i/dx_j| and their total beta.

    :param model: a validated model.
    :param envelope: `uniform` reports every entry as the largest rounded-up
    supremum, `entrywise` reports each entry's own rounded-up supremum.
    :param box: overrides the model working box.
    :return:
    """
    box = model.box if box is None else box
    raw = np.empty((model.s, model.n))
    methods = []
    for j, family in enumerate(model.families):
        sups, tags = family_suprema(family, box)
        picks = model.ordinals[:, j] - 1
        raw[:, j] = [sups[rho] for rho in picks]
        methods.append(tuple(tags[rho] for rho in picks))
    rounded = np.vectorize(round_up)(raw)
    match envelope:
        case "uniform":
            entries = np.full_like(raw, rounded.max())
        case "entrywise":
            entries = rounded
        case _:
            raise ValueError(f"Unknown envelope `{envelope}`.")
    # methods are stored rule-major, like `entries`
    methods_by_rule = tuple(zip(*methods))
    return BetaBounds(
        entries=entries,
        raw=raw,
        methods=methods_by_rule,
        beta=float(entries.sum()),
    )


def _dimension_violations(model: TSModel) -> list[Violation]:
    if model.A.ndim != 3 or model.A.shape[1] != model.A.shape[2]:
        return [Violation("dimension", "`A` must stack square matrices.")]
    out = []
    s, n, _ = model.A.shape
    if model.ordinals.shape != (s, n):
        out.append(
            Violation("dimension", f"ordinals must have shape ({s}, {n}).")
        )
    if model.B.ndim != 3 or model.B.shape[:2] != (s, n):
        out.append(Violation("dimension", f"`B` must stack {s} matrices with {n} rows."))
    if model.C.shape != (s, n, n):
        out.append(Violation("dimension", f"`C` must stack {s} matrices {n}x{n}."))
    if len(model.families) != n:
        out.append(
            Violation("dimension", f"expected {n} membership families, got {len(model.families)}.")
        )
    for j, family in enumerate(model.families):
        if family.dimension != j:
            out.append(
                Violation("dimension", f"family {j + 1} is bound to dimension {family.dimension + 1}.")
            )
    return out


def _grade_violations(model: TSModel) -> list[Violation]:
    out = []
    for j, family in enumerate(model.families):
        if family.size < 1:
            out.append(Violation("grade parameters", f"dimension {j + 1} has no fuzzy sets."))
        if sum(isinstance(g, Complement) for g in family.grades) > 1:
            out.append(
                Violation("grade parameters", f"dimension {j + 1} has more than one complement.")
            )
        for rho, grade in enumerate(family.grades):
            if isinstance(grade, Gaussian) and not (grade.c > 0 and grade.a > 0):
                out.append(
                    Violation(
                        "grade parameters",
                        f"dimension {j + 1}, set {rho + 1}: `c` and `a` must be positive.",
                    )
                )
    return out


def _rule_violations(model: TSModel) -> tuple[list[Violation], bool]:
    out = []
    sizes = model.sizes
    for i, row in enumerate(model.ordinals):
        for j, alpha in enumerate(row):
            if not 1 <= alpha <= sizes[j]:
                out.append(
                    Violation(
                        "ordinal range",
                        f"rule {i + 1}, dimension {j + 1}: ordinal {alpha} not in 1..{sizes[j]}.",
                    )
                )
    seen: dict[tuple, int] = {}
    for i, row in enumerate(map(tuple, model.ordinals.tolist())):
        if row in seen:
            out.append(
                Violation("duplicate rule", f"rules {seen[row] + 1} and {i + 1} share ordinals {row}.")
            )
        seen.setdefault(row, i)
    combos = set(product(*(range(1, size + 1) for size in sizes)))
    full = set(seen) == combos and model.s == len(combos)
    if not full:
        out.append(
            Violation(
                "incomplete rule base",
                f"{model.s} rules do not cover the {len(combos)} ordinal combinations.",
            )
        )
    return out, full


def _partition_violations(model: TSModel, full: bool) -> list[Violation]:
    """Denominators are checked on every model, the partition of unity only
    on full-combination rule bases."""
    rng = np.random.default_rng(0)
    xs = rng.uniform(-model.box, model.box, size=(PARTITION_SAMPLES, model.n))
    try:
        h = basis(model, xs)
    except DegenerateDenominator as error:
        return [Violation("degenerate denominator", str(error))]
    out = []
    if np.any(h < -PARTITION_TOL):
        out.append(Violation("negative grade", "some basis functions are negative."))
    if full and (err := np.max(np.abs(h.sum(axis=1) - 1))) > PARTITION_TOL:
        out.append(
            Violation("partition of unity", f"basis sums deviate from one by {err:.2e}.")
        )
    return out


def validate(model: TSModel) -> ValidationReport:
    """Checks the model and reports every violation found. Rule and partition
    checks run only on dimensionally consistent models."""
    violations = _dimension_violations(model)
    if violations:
        return ValidationReport(violations, full_combination=False)
    violations += _grade_violations(model)
    rule_violations, full = _rule_violations(model)
    violations += rule_violations
    if not any(v.kind in ("ordinal range", "grade parameters") for v in violations):
        violations += _partition_violations(model, full)
    return ValidationReport(violations, full_combination=full)


def with_parameters(
    model: TSModel,
    slots: Sequence[SweepParameter],
    values: Sequence[float],
) -> TSModel:
    """A copy of `model` with the scalar entries named by `slots` replaced."""
    matrices = {"A": model.A.copy(), "B": model.B.copy(), "C": model.C.copy()}
    for slot, value in zip(slots, values):
        if slot.matrix not in matrices:
            raise ValueError(f"Unknown matrix `{slot.matrix}`.")
        matrices[slot.matrix][slot.rule, slot.row, slot.col] = value
    return model._replace(**matrices)


def closed_loop(model: TSModel, gains: np.ndarray) -> ClosedLoopModel:
    """Drift vertices A_ij = A_i + B_i K_j of the loop closed by `gains` (s, p, n)."""
    gains = np.asarray(gains, dtype=float)
    if gains.shape != (model.s, model.p, model.n):
        raise DimensionMismatch(
            f"Gains must have shape ({model.s}, {model.p}, {model.n}), got {gains.shape}."
        )
    vertices = model.A[:, None] + np.einsum("iap,jpb->ijab", model.B, gains)
    return ClosedLoopModel(model=model, gains=gains, vertices=vertices)
