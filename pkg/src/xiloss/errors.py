"""Exception hierarchy shared across the toolkit.

Every error that can escape to the command line carries an ``exit_code``
so the CLI can map failures onto its documented contract:
0 success, 2 usage, 3 data error, 4 numerical error.
"""

from __future__ import annotations


class XilossError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ParameterDomainError(XilossError, ValueError):
    """A parameter violates a documented invariant (names the offender)."""

    exit_code = 2


class DataError(XilossError):
    """Input files or datasets are malformed, empty, or inconsistent."""

    exit_code = 3


class NumericalError(XilossError):
    """A numerical procedure failed or left its validated regime."""

    exit_code = 4


class ConditioningError(NumericalError):
    """Matrix composition became non-finite; reports wavelength and seed."""


class DegenerateSolutionError(NumericalError):
    """Wronskian of the two sweep solutions fell below 1e-14 of scale."""


class CalibrationRangeError(NumericalError):
    """Calibration target outside the range the solver can bracket."""


class UnderResolvedError(NumericalError):
    """Spectral grid too coarse for the structures it must resolve."""


class QuadratureError(NumericalError):
    """Numerical integration failed to converge; carries diagnostics."""


class ModelMismatchError(NumericalError):
    """Every posterior cell has zero likelihood for the supplied data."""


class ResolutionLimitedError(XilossError):
    """Linewidth at or below the instrument floor; Q not recoverable.

    Raised per resonance and caught by pipeline code, which flags and
    excludes the entry instead of aborting the run.
    """

    exit_code = 4
