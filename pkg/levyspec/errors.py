"""
Exception hierarchy. The CLI maps DataError to exit code 1 and
NumericalError to exit code 2.
"""


class LevySpecError(Exception):
    """Base class for all calibration errors."""
    exit_code = 1


class DataError(LevySpecError):
    """Malformed or inadmissible input data (quote files, model JSON, parameters)."""
    exit_code = 1


class NumericalError(LevySpecError):
    """A numerical procedure failed: aliasing, singular systems, ill-conditioned frequencies."""
    exit_code = 2


class DomainError(NumericalError):
    """Evaluation outside the admissible strip or across a branch cut."""
