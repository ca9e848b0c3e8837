"""Exception hierarchy shared across the package."""


class PosefitError(Exception):
    """Base class for all package-specific errors."""


class DegenerateInput(PosefitError):
    """Input is rank-deficient or otherwise unusable for a conversion."""


class DimensionMismatch(PosefitError):
    """Array shapes are inconsistent with the model or each other."""


class RepresentationMismatch(PosefitError):
    """Pose representation tag does not match the consumer's expectation."""


class NonInvertibleLayer(PosefitError):
    """A flow layer lost invertibility (determinant underflow etc.)."""


class EmptyDataset(PosefitError):
    """Training requested on an empty dataset."""


class DivergedTraining(PosefitError):
    """Training loss became non-finite."""


class UnknownPart(PosefitError):
    """Body part index outside [1, N_b]."""


class InvalidConfig(PosefitError):
    """Configuration values are inconsistent or out of range."""


class BehindCamera(PosefitError):
    """Point at or behind the camera plane cannot be projected."""


class DegenerateConfiguration(PosefitError):
    """Translation solve has no unique solution (coincident joints)."""


class NegativeScale(PosefitError):
    """Weak-perspective solve produced a non-positive scale."""


class SingularCovariance(PosefitError):
    """GMM covariance not positive definite even after regularization."""


class NoActiveTerms(PosefitError):
    """Weakly supervised loss requested with no evidence term active."""


class TooFewFrames(PosefitError):
    """Temporal term requires at least two frames."""


class AllStartsDiverged(PosefitError):
    """Every restart of the fit produced non-finite values."""


class NonFiniteValue(PosefitError):
    """A function evaluation returned NaN or Inf."""


class ConfigError(PosefitError):
    """Bad run configuration (unknown keys, missing fields, bad values)."""


class IoError(PosefitError):
    """File could not be read, parsed, or written."""
