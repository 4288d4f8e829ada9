"""
Exception hierarchy for symflow

Every failure raised by the toolkit derives from ``SymflowError`` so the CLI
and the tool server can map errors to exit codes / error payloads in one
place. Report-only checks (edge tests, Markov checks) never raise for a
violated inequality; they return diagnostics instead.
"""
from typing import Any, Optional, Sequence


class SymflowError(Exception):
    """Base class for all symflow errors"""
    code = "symflow_error"


class ConfigurationError(SymflowError):
    """Invalid configuration, or parameters too strict to build a stage"""
    code = "configuration"


class DomainError(SymflowError, ValueError):
    """A point or chart argument lies outside the domain of a map"""
    code = "domain"


class InputError(SymflowError, ValueError):
    """Malformed input to a pure operation (bad grid, reducible graph, ...)"""
    code = "input"


class IntegrationError(SymflowError):
    """Numeric integration produced non-finite state"""
    code = "integration"


class SectionError(SymflowError):
    """Section construction or return search failed"""
    code = "section"


class NUHRejectionError(SymflowError):
    """A sampled point has a finite-time exponent inside the ±χ band"""
    code = "nuh_rejection"

    def __init__(self, message: str, exponents: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.exponents = list(exponents) if exponents is not None else []


class HorizonError(SymflowError):
    """Truncated Lyapunov integral did not converge within the horizon"""
    code = "horizon"


class ReductionError(SymflowError):
    """Oseledets-Pesin block bounds violated"""
    code = "reduction"


class WindowError(SymflowError):
    """Orbit window too short for the requested construction"""
    code = "window"


class TransformError(SymflowError):
    """Graph transform failed to converge at a grid node"""
    code = "transform"

    def __init__(self, message: str, node: Any = None):
        super().__init__(message)
        self.node = node


class ShadowingError(SymflowError):
    """Fixed-point iteration for a stable/unstable intersection diverged"""
    code = "shadowing"


class CoverGapError(SymflowError):
    """A sample escaped every rectangle of the cover"""
    code = "cover_gap"


class CoverageError(SymflowError):
    """An itinerary left the cover"""
    code = "coverage"


class StageError(SymflowError):
    """A pipeline stage failed; carries the stage name and the cause"""
    code = "stage"

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
