"""A small modeling layer for linear matrix inequalities.

Scalar decision variables live in a `VarSpace`. Structured matrix variables map
their slots onto those scalars, and combine with constants into affine
expressions `F(x) = F_0 + sum_v x_v F_v` (`MatExpr`). An `SDPProblem` collects
symmetric expressions constrained positive semidefinite, optionally with a
strictness margin, and a linear objective. See `itsfuzz.lmi.solver` for solving.
"""

from enum import Enum
from numbers import Real
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from itsfuzz.errors import DimensionMismatch
from itsfuzz.types import PoolKey


class Pattern(Enum):
    FULL_SYMMETRIC = "full-symmetric"
    HOLLOW_SYMMETRIC = "hollow-symmetric"
    DIAGONAL = "diagonal"
    SHARED_DIAGONAL = "shared-diagonal"
    FULL = "full"


class VarSpace:
    """An ordered registry of scalar decision variables.

    A sharing key makes `add` return the scalar already registered under
    that key, so that one scalar can serve several matrix slots."""

    def __init__(self):
        self.names: list[str] = []
        self._by_name: dict[str, int] = {}
        self._by_key: dict = {}

    def __len__(self) -> int:
        return len(self.names)

    def add(self, name: str, key=None) -> int:
        if key is not None and key in self._by_key:
            return self._by_key[key]
        if name in self._by_name:
            raise ValueError(f"Variable `{name}` already exists.")
        index = len(self.names)
        self.names.append(name)
        self._by_name[name] = index
        if key is not None:
            self._by_key[key] = index
        return index

    def index(self, name: str) -> int:
        return self._by_name[name]


def _as_expr(item) -> "MatExpr":
    match item:
        case MatExpr():
            return item
        case StructuredMatVar():
            return item.expr
        case np.ndarray():
            return MatExpr(np.atleast_2d(item.astype(float)))
        case _:
            raise TypeError(f"Cannot turn {type(item).__name__} into a matrix expression.")


class MatExpr:
    """An affine matrix expression `const + sum_v x_v * coefs[v]`.

    Expressions may be rectangular and non-symmetric, only symmetric square
    ones can be constrained. Products are affine only with constant matrices."""

    __array_ufunc__ = None

    def __init__(self, const: np.ndarray, coefs: dict[int, np.ndarray] | None = None):
        self.const = np.asarray(const, dtype=float)
        self.coefs = {} if coefs is None else coefs
        for v, coef in self.coefs.items():
            if coef.shape != self.const.shape:
                raise DimensionMismatch(
                    f"Coefficient of variable {v} has shape {coef.shape}, "
                    f"expected {self.const.shape}."
                )

    @classmethod
    def zeros(cls, rows: int, cols: int | None = None) -> "MatExpr":
        return cls(np.zeros((rows, rows if cols is None else cols)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @property
    def variables(self) -> list[int]:
        return sorted(self.coefs)

    def _check_same_shape(self, other: "MatExpr"):
        if self.shape != other.shape:
            raise DimensionMismatch(f"Cannot add shapes {self.shape} and {other.shape}.")

    def __add__(self, other) -> "MatExpr":
        other = _as_expr(other)
        self._check_same_shape(other)
        coefs = dict(self.coefs)
        for v, coef in other.coefs.items():
            coefs[v] = coefs[v] + coef if v in coefs else coef
        return MatExpr(self.const + other.const, coefs)

    __radd__ = __add__

    def __neg__(self) -> "MatExpr":
        return MatExpr(-self.const, {v: -c for v, c in self.coefs.items()})

    def __sub__(self, other) -> "MatExpr":
        return self + (-_as_expr(other))

    def __rsub__(self, other) -> "MatExpr":
        return _as_expr(other) + (-self)

    def __mul__(self, scalar) -> "MatExpr":
        if not isinstance(scalar, Real):
            raise TypeError("Expressions can only be scaled by real numbers.")
        return MatExpr(scalar * self.const, {v: scalar * c for v, c in self.coefs.items()})

    __rmul__ = __mul__

    def __matmul__(self, other) -> "MatExpr":
        if isinstance(other, MatExpr | StructuredMatVar):
            raise TypeError("Product of two variable expressions is not affine.")
        m = np.atleast_2d(np.asarray(other, dtype=float))
        if self.shape[1] != m.shape[0]:
            raise DimensionMismatch(f"Cannot multiply shapes {self.shape} and {m.shape}.")
        return MatExpr(self.const @ m, {v: c @ m for v, c in self.coefs.items()})

    def __rmatmul__(self, other) -> "MatExpr":
        m = np.atleast_2d(np.asarray(other, dtype=float))
        if m.shape[1] != self.shape[0]:
            raise DimensionMismatch(f"Cannot multiply shapes {m.shape} and {self.shape}.")
        return MatExpr(m @ self.const, {v: m @ c for v, c in self.coefs.items()})

    @property
    def T(self) -> "MatExpr":
        return MatExpr(self.const.T.copy(), {v: c.T.copy() for v, c in self.coefs.items()})

    def sym(self) -> "MatExpr":
        """The symmetrization X + X^T."""
        return self + self.T

    def congruence(self, a: np.ndarray) -> "MatExpr":
        """The congruence a^T X a."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return a.T @ self @ a

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        return np.allclose(self.const, self.const.T, atol=tol) and all(
            np.allclose(c, c.T, atol=tol) for c in self.coefs.values()
        )

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for v, coef in self.coefs.items():
            out += values[v] * coef
        return out

    def inner(self, c: np.ndarray) -> "LinearForm":
        """The linear functional <c, X> = tr(c^T X)."""
        c = np.asarray(c, dtype=float)
        if c.shape != self.shape:
            raise DimensionMismatch(f"Cannot pair shapes {c.shape} and {self.shape}.")
        return LinearForm(
            {v: float(np.sum(c * coef)) for v, coef in self.coefs.items()},
            float(np.sum(c * self.const)),
        )

    def trace(self) -> "LinearForm":
        return self.inner(np.eye(self.shape[0]))

    @staticmethod
    def block(rows: Sequence[Sequence]) -> "MatExpr":
        """Assembles a block matrix. Entries are expressions, variables,
        constant arrays or `None` for zero blocks. Every block row and column
        needs at least one sized entry."""
        grid = [[None if e is None else _as_expr(e) for e in row] for row in rows]
        ncols = len(grid[0])
        if any(len(row) != ncols for row in grid):
            raise DimensionMismatch("Block rows have different lengths.")
        heights = [_common([e.shape[0] for e in row if e is not None]) for row in grid]
        widths = [
            _common([row[k].shape[1] for row in grid if row[k] is not None])
            for k in range(ncols)
        ]
        offsets_r = np.concatenate([[0], np.cumsum(heights)])
        offsets_c = np.concatenate([[0], np.cumsum(widths)])
        shape = (int(offsets_r[-1]), int(offsets_c[-1]))
        const = np.zeros(shape)
        coefs: dict[int, np.ndarray] = {}
        for r, row in enumerate(grid):
            for k, e in enumerate(row):
                if e is None:
                    continue
                if e.shape != (heights[r], widths[k]):
                    raise DimensionMismatch(f"Block ({r}, {k}) has shape {e.shape}.")
                rs = slice(offsets_r[r], offsets_r[r + 1])
                cs = slice(offsets_c[k], offsets_c[k + 1])
                const[rs, cs] = e.const
                for v, coef in e.coefs.items():
                    if v not in coefs:
                        coefs[v] = np.zeros(shape)
                    coefs[v][rs, cs] = coef
        return MatExpr(const, coefs)


def _common(sizes: list[int]) -> int:
    if not sizes:
        raise DimensionMismatch("Cannot size a block row or column made only of zeros.")
    if len(set(sizes)) != 1:
        raise DimensionMismatch(f"Inconsistent block sizes {sizes}.")
    return sizes[0]


class LinearForm(NamedTuple):
    """A linear objective `offset + sum_v coefs[v] * x_v`."""

    coefs: dict[int, float]
    offset: float = 0.0

    def __add__(self, other: "LinearForm") -> "LinearForm":
        coefs = dict(self.coefs)
        for v, c in other.coefs.items():
            coefs[v] = coefs.get(v, 0.0) + c
        return LinearForm(coefs, self.offset + other.offset)

    def __mul__(self, scalar: float) -> "LinearForm":
        return LinearForm({v: scalar * c for v, c in self.coefs.items()}, scalar * self.offset)

    __rmul__ = __mul__

    def evaluate(self, values: np.ndarray) -> float:
        return self.offset + sum(c * values[v] for v, c in self.coefs.items())


def total(forms: Iterable[LinearForm]) -> LinearForm:
    out = LinearForm({})
    for form in forms:
        out = out + form
    return out


class StructuredMatVar:
    """A matrix variable whose slots point to scalars of a VarSpace, -1 marking
    a structural zero. A shared-diagonal variable is a pool of scalars d_jj^rho
    keyed by (dimension j, ordinal rho): `at(ordinals)` assembles the diagonal
    matrix D_i of a rule."""

    __array_ufunc__ = None

    def __init__(
        self,
        name: str,
        pattern: Pattern,
        slots: np.ndarray,
        pool: dict[PoolKey, int] | None = None,
    ):
        self.name = name
        self.pattern = pattern
        self.slots = slots
        self.pool = pool

    def __repr__(self):
        return f"StructuredMatVar({self.name!r}, {self.pattern.value}, shape={self.shape})"

    @property
    def shape(self) -> tuple[int, int]:
        return self.slots.shape

    @property
    def size(self) -> int:
        return self.slots.shape[0]

    @property
    def scalars(self) -> list[int]:
        if self.pool is not None:
            return sorted(self.pool.values())
        return sorted(set(self.slots[self.slots >= 0].tolist()))

    def at(self, ordinals: Sequence[int]) -> "StructuredMatVar":
        """The rule matrix diag(d_11^{alpha_1}, .., d_nn^{alpha_n}), ordinals 1-based."""
        if self.pool is None:
            raise ValueError(f"`{self.name}` is not a shared-diagonal pool.")
        slots = np.full(self.shape, -1, dtype=int)
        for j, rho in enumerate(ordinals):
            slots[j, j] = self.pool[(j, int(rho))]
        return StructuredMatVar(f"{self.name}{tuple(ordinals)}", self.pattern, slots)

    @property
    def expr(self) -> MatExpr:
        coefs = {v: (self.slots == v).astype(float) for v in np.unique(self.slots) if v >= 0}
        return MatExpr(np.zeros(self.shape), {int(v): c for v, c in coefs.items()})

    def value(self, values: np.ndarray) -> np.ndarray:
        return np.where(self.slots >= 0, values[np.maximum(self.slots, 0)], 0.0)

    # arithmetic goes through the affine expression
    def __add__(self, other):
        return self.expr + other

    def __radd__(self, other):
        return _as_expr(other) + self.expr

    def __sub__(self, other):
        return self.expr - other

    def __rsub__(self, other):
        return _as_expr(other) - self.expr

    def __neg__(self):
        return -self.expr

    def __mul__(self, scalar):
        return self.expr * scalar

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self.expr @ other

    def __rmatmul__(self, other):
        return self.expr.__rmatmul__(other)

    @property
    def T(self) -> MatExpr:
        return self.expr.T

    def sym(self) -> MatExpr:
        return self.expr.sym()

    def congruence(self, a: np.ndarray) -> MatExpr:
        return self.expr.congruence(a)


def build_var(
    space: VarSpace,
    name: str,
    pattern: Pattern,
    size: int,
    cols: int | None = None,
    sizes: Sequence[int] | None = None,
) -> StructuredMatVar:
    """Registers the minimal set of scalars for a structured matrix variable.

    :param space: the variable registry.
    :param name: a prefix for the scalar names.
    :param pattern: the variable structure.
    :param size: number of rows.
    :param cols: number of columns, for `FULL` variables only.
    :param sizes: fuzzy set counts s_j per dimension, for `SHARED_DIAGONAL` only.
    :return:
    """
    if size < 1:
        raise ValueError("Matrix variables need at least one row.")
    slots = np.full((size, size), -1, dtype=int)
    match pattern:
        case Pattern.FULL_SYMMETRIC | Pattern.HOLLOW_SYMMETRIC:
            first = 0 if pattern == Pattern.FULL_SYMMETRIC else 1
            for r in range(size):
                for c in range(r + first, size):
                    slots[r, c] = slots[c, r] = space.add(f"{name}[{r + 1},{c + 1}]")
        case Pattern.DIAGONAL:
            for r in range(size):
                slots[r, r] = space.add(f"{name}[{r + 1}]")
        case Pattern.FULL:
            cols = size if cols is None else cols
            slots = np.array(
                [
                    [space.add(f"{name}[{r + 1},{c + 1}]") for c in range(cols)]
                    for r in range(size)
                ],
                dtype=int,
            ).reshape(size, cols)
        case Pattern.SHARED_DIAGONAL:
            if sizes is None or len(sizes) != size:
                raise DimensionMismatch("Shared diagonals need one set count per dimension.")
            pool = {
                (j, rho): space.add(f"{name}[{j + 1}]^{rho}", key=(name, j, rho))
                for j in range(size)
                for rho in range(1, sizes[j] + 1)
            }
            return StructuredMatVar(name, pattern, slots, pool)
    return StructuredMatVar(name, pattern, slots)


class Constraint(NamedTuple):
    """`expr` is constrained positive semidefinite, or `>= margin * I` when strict."""

    name: str
    expr: MatExpr
    strict: bool


def margin(constraint: Constraint, eps: float) -> float:
    """Strictness margin, relative to the scale of the constant term."""
    if not constraint.strict:
        return 0.0
    scale = float(np.max(np.abs(constraint.expr.const), initial=0.0))
    return eps * max(1.0, scale)


class SDPProblem:
    """A semidefinite program over the scalars of `space`: minimizes
    `objective` subject to every constraint. Feasibility problems keep the
    zero objective."""

    def __init__(self, eps: float = 1e-6):
        self.space = VarSpace()
        self.eps = eps
        self.constraints: list[Constraint] = []
        self.objective = LinearForm({})
        self.variables: dict[str, StructuredMatVar] = {}

    def var(self, name: str, pattern: Pattern, size: int, **kwargs) -> StructuredMatVar:
        if name in self.variables:
            return self.variables[name]
        self.variables[name] = build_var(self.space, name, pattern, size, **kwargs)
        return self.variables[name]

    def constrain(self, name: str, expr, strict: bool = True) -> Constraint:
        expr = _as_expr(expr)
        if not expr.is_symmetric():
            raise DimensionMismatch(f"Constraint `{name}` is not symmetric square.")
        if any(v >= len(self.space) for v in expr.coefs):
            raise ValueError(f"Constraint `{name}` references unknown variables.")
        constraint = Constraint(name, expr, strict)
        self.constraints.append(constraint)
        return constraint

    def minimize(self, objective: LinearForm):
        self.objective = objective

    def copy_with_objective(self, objective: LinearForm) -> "SDPProblem":
        """Same variables and constraints, new objective."""
        other = SDPProblem(self.eps)
        other.space = self.space
        other.constraints = self.constraints
        other.variables = self.variables
        other.objective = objective
        return other

    def margins(self) -> list[float]:
        return [margin(c, self.eps) for c in self.constraints]
