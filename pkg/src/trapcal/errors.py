"""Exception taxonomy.

Two families matter for the CLI exit-code contract: :class:`InputError`
(bad files, bad arguments, unmet preconditions -> exit 2) and
:class:`NumericalError` (the computation itself failed -> exit 1).
"""


class TrapcalError(Exception):
    """Base class for all trapcal errors."""


class InputError(TrapcalError):
    """Invalid input data, configuration, or precondition violation."""


class NumericalError(TrapcalError):
    """A numerical procedure failed (non-convergence, singular system)."""


# -- signal containers and division schemes ---------------------------------

class RateError(InputError):
    """Sample rate is not a positive finite number."""


class ParseError(InputError):
    """A recording or spectrum file contains a malformed row."""


class SchemaError(InputError):
    """A declared column or channel is missing from the input."""


class DenominatorCollapse(InputError):
    """Too many near-zero denominator samples; the trap was likely lost."""


class ZeroMeanDenominator(InputError):
    """Denominator mean is indistinguishable from zero."""


# -- spectral estimation -----------------------------------------------------

class TooShort(InputError):
    """Series too short for the requested spectral estimate."""


class BadBlockCount(InputError):
    """Block count must be an integer >= 2."""


class UnknownChannel(InputError):
    """Requested channel is not present in the recording."""


class EmptyBand(InputError):
    """Band mask retains no frequency bins."""


class SpecError(InputError):
    """Noise specification describes an identically-zero spectrum."""


# -- models ------------------------------------------------------------------

class UnknownKind(InputError):
    """Model kind tag not recognized."""


class GridMismatch(InputError):
    """Dark-spectrum grid does not cover the evaluation grid."""


# -- fitting -----------------------------------------------------------------

class DegenerateSpectrum(InputError):
    """Spectrum carries no usable shape information for an initial guess."""


class NoConvergence(NumericalError):
    """Iteration cap reached before the convergence criteria were met.

    Carries the last iterate as ``partial`` (a FitResult with
    ``converged=False``) for diagnostics.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SingularNormalMatrix(NumericalError):
    """Weighted normal matrix is singular; parameters are degenerate."""


class BandMismatch(InputError):
    """Two fits being compared were not made on the same spectrum band."""


class DegenerateAbscissa(InputError):
    """Through-origin fit impossible: all abscissa values are zero."""


# -- pipelines ---------------------------------------------------------------

class MissingChannel(InputError):
    """A channel required by the calibration method is absent."""


class DarkGridMismatch(InputError):
    """Dark recording's spectral grid differs from the signal recording's."""


class MixedMethods(InputError):
    """Power sweep over reports produced by different methods."""


class InsufficientPowers(InputError):
    """Power sweep needs at least two distinct trapping powers."""


class NonPositiveInput(InputError):
    """A strictly positive physical quantity was zero or negative."""


class ExperimentalMethodError(InputError):
    """Experimental method requested without the enabling flag."""
