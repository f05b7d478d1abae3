"""Exception hierarchy shared by the numerical modules and the pipeline."""
from __future__ import annotations

from typing import Sequence


class EpidemicError(Exception):
    """Base class for every error raised by the epidemic package."""

    exit_code = 1


class ConfigurationError(EpidemicError, ValueError):
    """Invalid parameters, grids or scenario definitions."""

    exit_code = 2


class DimensionError(EpidemicError, ValueError):
    """Grid sizes or shapes that an operator cannot work with."""

    exit_code = 2


class FieldParseError(EpidemicError, ValueError):
    """A field file could not be decoded."""

    exit_code = 2

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ScheduleError(EpidemicError, ValueError):
    """Theory parameter schedule requested outside its admissible range."""

    exit_code = 2


class DataValidityError(EpidemicError, ValueError):
    """Measured data violate an assumption of the inverse problem."""

    exit_code = 3


class StabilityError(EpidemicError, RuntimeError):
    exit_code = 3

    def __init__(self, message: str, max_dt: float) -> None:
        super().__init__(f"{message}; max admissible time step is {max_dt:.6g}")
        self.max_dt = max_dt


class DivergenceError(EpidemicError, RuntimeError):
    exit_code = 3

    def __init__(self, message: str, step: int) -> None:
        super().__init__(f"{message} at step {step}")
        self.step = step


class EvaluationError(EpidemicError, RuntimeError):
    exit_code = 3

    def __init__(self, message: str, index: tuple[int, ...] | None = None) -> None:
        where = f" at node {index}" if index is not None else ""
        super().__init__(f"{message}{where}")
        self.index = index


class AssemblyError(EpidemicError, RuntimeError):
    exit_code = 3


class ConvergenceError(EpidemicError, RuntimeError):
    """An iterative solver hit its iteration cap."""

    exit_code = 3

    def __init__(self, message: str, residuals: Sequence[float] = ()) -> None:
        super().__init__(message)
        self.residuals = list(residuals)


class StepSizeError(EpidemicError, RuntimeError):
    exit_code = 3

    def __init__(self, message: str, suggested_step: float) -> None:
        super().__init__(f"{message}; try step {suggested_step:.6g}")
        self.suggested_step = suggested_step


class ProvenanceError(EpidemicError, RuntimeError):
    """Bundles do not chain, or their payload does not match the manifest."""

    exit_code = 4
