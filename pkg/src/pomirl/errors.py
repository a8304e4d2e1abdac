"""Exception types shared across the package."""


class PomirlError(Exception):
    """Base class for all package errors."""


class ZeroLikelihood(PomirlError):
    """Belief update normalizer vanished: the observation is impossible
    under the current belief, which usually means inconsistent trajectory
    data."""


class NumericalFailure(PomirlError):
    """A linear solve or LP pivot sequence failed to reach the required
    residual tolerance."""


class SingularFlow(PomirlError):
    """The undiscounted flow system is singular (the policy does not reach
    an absorbing state almost surely)."""


class EmptyTarget(PomirlError):
    """Specification compilation produced an empty target set."""


class UnknownLabel(PomirlError):
    """A formula refers to a label the model does not define."""


class DegenerateLinearization(PomirlError):
    """Linearization requested at a state with vanishing visitation count
    and nonzero reward mass."""
