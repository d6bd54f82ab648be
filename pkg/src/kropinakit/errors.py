"""Exception hierarchy shared by every kropinakit module."""


class KropinaError(Exception):
    """Base class for all errors raised by kropinakit."""


class ExprSyntaxError(KropinaError, ValueError):
    """Malformed expression source. ``position`` is a 0-based column."""

    def __init__(self, message, source="", position=None):
        self.source = source
        self.position = position
        if position is not None:
            message = f"{message} at position {position}"
            if source:
                message += f"\n  {source}\n  {' ' * position}^"
        super().__init__(message)


class UnknownIdentifierError(ExprSyntaxError):
    def __init__(self, name, source="", position=None, allowed=()):
        self.name = name
        hint = f" (chart coordinates: {', '.join(allowed)})" if allowed else ""
        super().__init__(f"unknown identifier {name!r}{hint}", source, position)


class DomainError(KropinaError, ArithmeticError):
    """Evaluation left the domain of an operation (pole, log/sqrt of non-positive, overflow)."""

    def __init__(self, message, subexpression=None, point=None):
        self.subexpression = subexpression
        self.point = point
        if subexpression is not None:
            message = f"{message} in subexpression '{subexpression}'"
        if point is not None:
            message += f" at x={tuple(float(v) for v in point)}"
        super().__init__(message)


class GeometryError(KropinaError):
    pass


class NotPositiveDefiniteError(GeometryError):
    def __init__(self, eigenvalue, point=None):
        self.eigenvalue = eigenvalue
        where = "" if point is None else f" at x={tuple(float(v) for v in point)}"
        super().__init__(f"metric is not positive definite{where}: eigenvalue {eigenvalue:.6g}")


class IllConditionedError(GeometryError):
    def __init__(self, condition, point=None):
        self.condition = condition
        where = "" if point is None else f" at x={tuple(float(v) for v in point)}"
        super().__init__(f"metric is singular or ill-conditioned{where}: condition number {condition:.3g}")


class SingularDirectionError(GeometryError):
    """Direction outside the admissible cone W_0 > eps_dir * |y|_h (equivalently beta > 0)."""


class InadmissibleError(SingularDirectionError):
    """Initial condition of a geodesic is not admissible."""


class UnitLengthError(GeometryError):
    pass


class NotKillingError(GeometryError):
    pass


class StepSizeError(KropinaError):
    """Finite-difference estimates at h and h/2 disagree beyond tolerance."""


class DegenerateModelError(KropinaError):
    pass


class InconsistentVerdictError(KropinaError):
    """The two classification routes disagree. Always an implementation bug; never swallowed."""


class SpecError(KropinaError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
