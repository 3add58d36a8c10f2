"""Exception hierarchy shared by all modules."""


class LamePoseError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(LamePoseError, ValueError):
    """Invalid curve or camera parameters."""


class BehindCameraError(LamePoseError):
    """A world point has non-positive depth in the camera frame."""


class ParallelRayError(LamePoseError):
    """A pixel ray is parallel to the ceiling plane."""


class NegativeDepthError(LamePoseError):
    """A pixel ray meets the ceiling plane behind the camera."""


class DegenerateConfigurationError(LamePoseError):
    """Correspondences do not constrain a unique pose."""


class DatabaseError(LamePoseError, ValueError):
    """Invalid LED database contents."""


class SchemaError(DatabaseError):
    """Malformed or wrongly versioned document."""


class UnknownLedError(LamePoseError, KeyError):
    """An observation references an LED id missing from the database."""

    def __str__(self):
        return Exception.__str__(self)


class InsufficientObservationsError(LamePoseError, ValueError):
    """Fewer observed LEDs than the solver needs."""


class InfeasibleInitializerError(LamePoseError):
    """The initial pose cannot back-project the observed contours."""


class RefinementDivergedError(LamePoseError):
    """The refinement produced a non-finite cost."""


class InfeasibleScenarioError(LamePoseError):
    """Pose rejection sampling exhausted its attempt budget."""


class NotVisibleError(LamePoseError):
    """An LED is not fully inside the image."""


class SimulationAbortedError(LamePoseError):
    """Too many Monte Carlo trials failed."""
