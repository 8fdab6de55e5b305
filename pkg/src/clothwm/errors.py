"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operand shapes are inconsistent for the requested operation."""


class NonFiniteValueError(FloatingPointError):
    """A NaN or infinity appeared in a forward or backward pass."""


class NotResetError(RuntimeError):
    """Environment stepped before reset()."""


class NonFiniteActionError(ValueError):
    """Action contains NaN or infinity."""


class GridTooSmallError(ValueError):
    """Particle grid is smaller than the keypoint subsample."""


class ModelFrozenError(RuntimeError):
    """Training step attempted on a model constructed as untrainable."""


class NonPositiveTemperatureError(ValueError):
    """Mixture sampling temperature must be > 0."""


class DegenerateCovarianceError(RuntimeError):
    """CMA-ES covariance has a near-zero eigenvalue; a restart is needed."""


class LengthMismatchError(ValueError):
    """Candidate and fitness counts disagree."""


class NonFiniteFitnessError(ValueError):
    """A fitness value is NaN or infinite."""


class EmptyHistoryError(RuntimeError):
    """No completed generation to report a best individual from."""


class ParamLengthMismatchError(ValueError):
    """Flat parameter vector length does not match the policy spec."""


class InsufficientDataError(ValueError):
    """Buffer holds fewer rollouts than requested."""


class BadArgumentsError(ValueError):
    """Invalid CLI argument or configuration key/value."""


class MissingMetricsError(RuntimeError):
    """A run directory lacks the metrics file needed for reporting."""
