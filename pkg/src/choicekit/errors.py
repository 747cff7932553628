"""Exception and warning types shared across the package."""


class ChoicekitError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ChoicekitError):
    """Invalid input data, configuration, or model declaration."""


class MissingColumnError(ValidationError):
    """A required CSV column is absent."""


class DuplicateChoiceError(ValidationError):
    """A choice task does not have exactly one chosen alternative."""


class UnknownLevelError(ValidationError):
    """A categorical/binary value is not among the declared levels."""


class NonNumericContinuousError(ValidationError):
    """A continuous attribute cell could not be parsed as a number."""


class UnknownTraitError(ValidationError):
    """A subgroup predicate references a trait the dataset does not carry."""


class EmptyDatasetError(ValidationError):
    """An operation that needs observations received none."""


class InvalidConfigError(ValidationError):
    """A design or run configuration violates its constraints."""


class InvalidTruthError(ValidationError):
    """Simulation parameters are inconsistent with the model specification."""


class UnknownCoefficientError(ValidationError):
    """A coefficient name is not part of the model specification."""


class DimensionMismatchError(ValidationError):
    """A parameter vector does not match the specification's dimension."""


class DegenerateDataError(ValidationError):
    """A coefficient's design column has no within-task variation."""


class MissingMeansError(ValidationError):
    """Attribute means required for a generalized line are missing."""


class OutletMismatchError(ValidationError):
    """Two potential lines refer to different outlets."""


class DimensionTooLargeError(ValidationError):
    """Requested draw dimension exceeds the scheme's supported limit."""


class PriceCoefficientNearZeroError(ChoicekitError):
    """The price coefficient is too weak for a reliable ratio."""


class EstimationError(ChoicekitError):
    """Base class for estimation failures."""


class NotConvergedError(EstimationError):
    """Optimizer stopped without meeting the convergence tolerance.

    The partially fitted result, when available, is attached as ``result``
    so callers can inspect diagnostics.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularHessianError(EstimationError):
    """The information matrix is singular; a coefficient is not identified."""


class PriceCoefficientWarning(UserWarning):
    """Ratio computed from a weak price coefficient; moments are unstable."""


class SeparationWarning(UserWarning):
    """Estimates are very large; the data may be perfectly separated."""
