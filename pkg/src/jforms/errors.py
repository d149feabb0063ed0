"""Exceptions raised by the numerical layers."""
from __future__ import annotations


class JFormsError(RuntimeError):
    """Base class; ``details`` is a JSON-ready dict of diagnostics."""

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = details or {}


class ConvergenceError(JFormsError):
    """An iterative solve ran out of iterations."""


class SpectralGapError(JFormsError):
    """No clean singular-value or eigenvalue gap; an integer cannot be decided."""


class DiscretizationError(JFormsError):
    """A postcondition that holds in the continuum failed on the grid."""


class SolverError(JFormsError):
    """The cone solver diverged or produced non-finite values."""
