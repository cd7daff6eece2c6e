class DegenerateDenominator(ArithmeticError):
    """The grades of a membership family sum to (almost) zero."""


class UnboundedDerivative(ValueError):
    """|x dmu/dx| keeps growing up to the edge of the working box."""


class DimensionMismatch(ValueError):
    """Incompatible matrix or expression shapes."""


class InvalidModel(ValueError):
    """The model fails validation for the requested mode."""

    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(f"{v.kind}: {v.message}" for v in violations))


class SolverFailure(RuntimeError):
    """The SDP backend could not produce a usable answer."""


class InitInfeasible(SolverFailure):
    """The cone complementarity constraint system has no feasible point."""


class NumericalFailure(ArithmeticError):
    """A numerically singular quantity, e.g. an almost singular Omega_j."""


class PreconditionViolated(ValueError):
    """A certificate does not satisfy the hypotheses of a check."""


class BoundViolated(ValueError):
    """The Hessian estimate does not hold at a sampled pair (x, y)."""

    def __init__(self, report):
        self.report = report
        super().__init__(
            f"Hessian bound violated by {report.max_violation:.3e} "
            f"at x={report.x.tolist()}, y={report.y.tolist()}."
        )


class ConfigError(ValueError):
    """A malformed model or certificate document, located by `where`."""

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")
