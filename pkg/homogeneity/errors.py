"""Exception types shared by the homogeneity-test modules."""

from __future__ import annotations

from typing import Any, List, Optional


class UphtError(Exception):
    """Base class for all errors raised by this package."""


class ParameterDomainError(UphtError, ValueError):
    """Parameter or argument outside its domain (sigma <= 0, |rho| >= 1, t < 0, ...)."""


class DegenerateDataError(UphtError, ValueError):
    """Data for which the constrained MLE sits on the sigma -> 0 boundary, or too few pairs."""


class InputFormatError(UphtError, ValueError):
    """Unparseable input file. `lines` holds the 1-based offending line numbers."""

    def __init__(self, message: str, lines: Optional[List[int]] = None):
        self.lines = list(lines or [])
        if self.lines:
            shown = ", ".join(str(i) for i in self.lines[:10])
            more = "" if len(self.lines) <= 10 else f" (+{len(self.lines) - 10} more)"
            message = f"{message} (line {shown}{more})"
        super().__init__(message)


class FitConvergenceError(UphtError, RuntimeError):
    """No start converged. `best` is the best FitResult found anyway."""

    def __init__(self, message: str, best: Any = None):
        super().__init__(message)
        self.best = best


class NestingViolationError(UphtError, RuntimeError):
    """An LRT statistic came out below -1e-6, i.e. a nested fit beat the larger one."""


class LawStateError(UphtError, RuntimeError):
    """A Monte-Carlo reference law was queried before it was populated."""


class CalibrationError(UphtError, RuntimeError):
    """Power-law regression failed or too many replicates failed to fit."""
