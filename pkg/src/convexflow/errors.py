"""Exception types shared across the package."""


class ConvexFlowError(Exception):
    """Base class for every error raised by this package."""


class OutOfRangeError(ConvexFlowError, ValueError):
    """A tangent vector reaches beyond the injectivity radius."""


class NonUniqueGeodesicError(ConvexFlowError, ValueError):
    """Two points are not joined by a unique minimal geodesic."""


class UnsupportedRepresentationError(ConvexFlowError, TypeError):
    """The operation needs a chart the manifold is not stored in."""


class OutOfTubeError(ConvexFlowError, ValueError):
    """A point lies outside the tube B(Y, epsilon) where projection is unique."""


class SolverFailureError(ConvexFlowError, RuntimeError):
    """An iterative solver did not converge."""


class DegenerateInputError(ConvexFlowError, ValueError):
    """Input violates an operation's non-degeneracy precondition."""


class OutOfPatchError(ConvexFlowError, ValueError):
    """A point lies outside the region where the level-set patch is a diffeomorphism."""


class FlowBlowUpError(ConvexFlowError, RuntimeError):
    """The explicit flow produced an update outside the range of exp."""


class ScenarioError(ConvexFlowError, ValueError):
    """A scenario file is malformed or violates an invariant."""
