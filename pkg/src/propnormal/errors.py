"""Exception types raised across the package."""


class PropnormalError(Exception):
    """Base class for all errors raised by propnormal."""


class ExprSyntaxError(PropnormalError, ValueError):
    """Malformed expression text.

    ``offset`` is the byte offset (UTF-8) into the source text.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class DomainError(PropnormalError, ArithmeticError):
    """An expression node was evaluated outside its domain, or overflowed."""

    def __init__(self, node, value, reason):
        super().__init__(f"{reason} in {node} (argument value {value!r})")
        self.node = node
        self.value = value
        self.reason = reason


class RegularityError(PropnormalError, ValueError):
    """|grad psi| dropped below the surface's regularity floor."""


class NotOnSurfaceError(PropnormalError, ValueError):
    pass


class OutsideDomainError(PropnormalError, ValueError):
    """Query point lies outside the surface's domain box."""


class NoConvergence(PropnormalError, ArithmeticError):
    """Closest-point Newton iteration failed from every start."""


class OutsideTube(PropnormalError, ValueError):
    """The projected offset is not smaller than the tube half-width."""


class MarginError(PropnormalError, ValueError):
    """A finite-difference stencil would leave the tube."""


class EpsilonValidationError(PropnormalError, ValueError):
    """The requested tube half-width failed validation."""

    def __init__(self, report):
        super().__init__(f"epsilon={report.epsilon} failed validation: {report.summary()}")
        self.report = report


class PreconditionError(PropnormalError, ValueError):
    pass


class GridError(PropnormalError, ValueError):
    pass
