"""Exception types raised by the solvers and oracles."""


class InvalidInputError(ValueError):
    """Input data violates a documented precondition."""


class RepresentationError(InvalidInputError):
    """Up and down martingale increments coincide at some node."""


class SchemeInfeasibleError(RuntimeError):
    """The implicit node equation is outside the contraction regime."""

    def __init__(self, message, step=None, index=None, factor=None):
        super().__init__(message)
        self.step = step
        self.index = index
        self.factor = factor


class NonConvergenceError(RuntimeError):
    """An iteration hit its cap before reaching the tolerance."""

    def __init__(self, message, last_ratio=None):
        super().__init__(message)
        self.last_ratio = last_ratio


class EnumerationTooLargeError(InvalidInputError):
    """Brute-force enumeration requested above the node-count guard."""
