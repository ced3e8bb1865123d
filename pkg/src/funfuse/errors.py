"""Exception types raised across the package."""


class FunfuseError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(FunfuseError, ValueError):
    pass


class OutOfDomainError(InvalidArgumentError):
    pass


class UnsupportedOrderError(InvalidArgumentError):
    pass


class RankDeficiencyError(FunfuseError, ArithmeticError):
    pass


class InsufficientCoverageError(InvalidArgumentError):
    pass


class MissingLocationError(InvalidArgumentError):
    pass


class SingularSystemError(FunfuseError, ArithmeticError):
    """A linear system could not be factorized; usually fixed by ``lambda1 > 0``."""


class DivergenceError(FunfuseError, ArithmeticError):
    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite iterate at ADMM iteration {iteration}")


class TuningFailureError(FunfuseError):
    pass


class InvalidStateError(FunfuseError):
    pass
