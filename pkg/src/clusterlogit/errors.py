"""Exception and warning classes raised across the package."""


class ClusterLogitError(Exception):
    """Base class for every error raised by this package."""


# data problems


class DataError(ClusterLogitError, ValueError):
    pass


class MissingColumn(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MissingValue(DataError):
    pass


class NonBinaryOutcome(DataError):
    pass


class SingleCluster(DataError):
    pass


class NoConstantColumn(DataError):
    pass


# estimation problems


class EstimationError(ClusterLogitError):
    pass


class Separation(EstimationError):
    """A perfect classifier exists; ``direction`` certifies it when known."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class NonConvergence(EstimationError):
    pass


class RankDeficient(EstimationError):
    pass


class SingularMatrix(EstimationError, ValueError):
    pass


class SingularInformation(SingularMatrix):
    pass


class SingularHessian(SingularMatrix):
    pass


class SingularSubsampleInformation(SingularMatrix):
    pass


class SingularRVR(SingularMatrix):
    pass


class NonPDAdjustment(SingularMatrix):
    pass


class TooManyDropped(EstimationError):
    pass


class ZeroVariance(EstimationError, ValueError):
    pass


class UnsupportedRestriction(ClusterLogitError, ValueError):
    pass


class RestrictedOrigin(ClusterLogitError, ValueError):
    pass


class NonPositiveSE(ClusterLogitError, ValueError):
    pass


class TooFewReplications(ClusterLogitError, ValueError):
    pass


class EmptyCluster(ClusterLogitError, ValueError):
    pass


class NoRoot(ClusterLogitError, ValueError):
    pass


class UsageError(ClusterLogitError):
    pass


class DegenerateReplicationWarning(UserWarning):
    """Some bootstrap replications had zero variance and were excluded."""
