"""Exception hierarchy shared by all fpklab modules."""


class FpkError(Exception):
    """Base class for every error raised by fpklab."""


class ArgumentError(FpkError, ValueError):
    """An argument is outside the domain of the operation."""


class ContractViolation(FpkError, ValueError):
    """An input breaks a documented invariant (weights, feasibility, signs)."""


class CapacityError(FpkError, ValueError):
    """The problem exceeds a configured size limit."""


class NumericalError(FpkError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class EvaluationError(NumericalError):
    """A user-supplied function returned a non-finite value."""


class PreconditionError(FpkError):
    """A hypothesis of a verification routine does not hold."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ConfigError(FpkError, ValueError):
    """Scenario configuration does not match the schema."""

    def __init__(self, message, path="/"):
        super().__init__(f"{path}: {message}")
        self.path = path
