#!/usr/bin/env python3
"""
Exception hierarchy and warning categories.

Each error carries the process exit code the CLI reports for it:
0 success, 1 unexpected, 2 configuration, 3 solver, 4 infeasible, 5 fit.
"""
from typing import List, Optional


class MicrotrapError(Exception):
    """Base class for all expected failures."""

    exit_code = 1


class ConfigError(MicrotrapError):
    """Invalid configuration, experiment file or missing input file."""

    exit_code = 2


class GeometryError(ConfigError):
    """Invalid trap dimensions/zone counts, or a position outside the trap."""


class SequenceError(ConfigError):
    """Invalid pulse-sequence ordering or step parameters."""


class DomainError(MicrotrapError, ValueError):
    """Argument outside the validity domain of a physics formula."""

    exit_code = 2


class SolverError(MicrotrapError):
    """Field solve failed to converge within the iteration cap."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        residual: Optional[float] = None,
        iterations: Optional[int] = None,
        electrode: Optional[str] = None,
    ):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.electrode = electrode


class OutOfGridError(MicrotrapError):
    """Interpolation requested outside every available field grid."""

    exit_code = 3


class NoConfinementError(MicrotrapError):
    """Axial curve has no interior minimum or non-positive curvature."""

    exit_code = 3


class CacheError(MicrotrapError):
    """Corrupt or mismatched field-cache file."""

    exit_code = 3


class InfeasibleError(MicrotrapError):
    """Voltage synthesis cannot meet its target within the DC bounds."""

    exit_code = 4

    def __init__(
        self,
        message: str,
        max_omega: Optional[float] = None,
        position_um: Optional[float] = None,
    ):
        super().__init__(message)
        self.max_omega = max_omega
        self.position_um = position_um


class FitError(MicrotrapError):
    """Degenerate fit input, unidentifiable spectrum or estimator without solution."""

    exit_code = 5

    def __init__(self, message: str, candidates: Optional[List] = None):
        super().__init__(message)
        self.candidates = candidates or []


class NoCoolingError(FitError):
    """Net sideband-cooling rate is not positive."""


class StabilityWarning(UserWarning):
    """Stability parameter close to or beyond the first stability region edge."""


class QuadrupoleFitWarning(UserWarning):
    """RF potential is not well described by a quadrupole at the fit point."""
