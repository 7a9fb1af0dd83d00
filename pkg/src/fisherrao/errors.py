"""Exception types raised across the toolkit."""

from __future__ import annotations


class FisherRaoError(Exception):
    """Base class for all toolkit errors."""


class DerivativeEvaluationError(FisherRaoError):
    def __init__(self, message: str, x=None, theta=None, index=None):
        super().__init__(message)
        self.x = x
        self.theta = theta
        self.index = index


class SamplingError(FisherRaoError):
    pass


class ExpectationError(FisherRaoError):
    pass


class SingularFisher(FisherRaoError):
    def __init__(self, min_eig: float, message: str | None = None):
        super().__init__(message or f"Fisher information not positive definite (min eigenvalue {min_eig:.3e})")
        self.min_eig = min_eig


class DomainError(FisherRaoError):
    pass


class TangencyViolation(FisherRaoError):
    pass


class IllConditionedFit(FisherRaoError):
    pass


class OnSingularStratum(FisherRaoError):
    pass


class OddLeadingOrder(FisherRaoError):
    pass


class InvalidSimulation(FisherRaoError):
    pass
