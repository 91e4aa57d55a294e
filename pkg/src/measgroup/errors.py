class MeasGroupError(Exception):
    """Base class for errors raised by measgroup."""


class DimensionError(MeasGroupError, ValueError):
    """Operands disagree on qubit count or vector length."""


class ResourceError(MeasGroupError):
    """A request would exceed a deliberate size guard."""


class ValidationError(MeasGroupError, ValueError):
    """Input is well formed but violates a value constraint."""


class ContractError(MeasGroupError, ValueError):
    """A precondition on the relationship between inputs does not hold,
    e.g. a covariance requested for anticommuting Pauli products."""


class ParseError(MeasGroupError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibleError(MeasGroupError):
    """An allocation leaves some Hamiltonian term unmeasured."""

    def __init__(self, message, term=None):
        self.term = term
        super().__init__(message)


class ConvergenceError(MeasGroupError):
    def __init__(self, message, residual=None, energy=None):
        self.residual = residual
        self.energy = energy
        super().__init__(message)
