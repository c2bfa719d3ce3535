"""Exception hierarchy for the analysis pipeline."""


class OUError(Exception):
    """Base class for all errors raised by ``ou_spectra``."""


class ValidationError(OUError):
    """The input matrices do not describe a valid OU model."""


class NonSquare(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NotPSD(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class NotHypoelliptic(OUError):
    pass


class NoInvariantMeasure(OUError):
    pass


class SingularQinf(OUError):
    pass


class QuadratureFailure(OUError):
    pass


class ChainMismatch(OUError):
    pass


class SpectrumMismatch(OUError):
    pass


class NotElliptic(OUError):
    pass


class NotDegenerate(OUError):
    pass


class WitnessSearchFailed(OUError):
    pass


class TruncationTooSmall(OUError):
    pass


class InvariantViolation(OUError):
    pass


class NotConverged(OUError):
    pass


class TruncationDominated(OUError):
    pass


class StepFailure(OUError):
    pass


class NotIntegrable(OUError):
    pass


class NotNormalized(OUError):
    pass


class FitWindowEmpty(OUError):
    pass
