"""Exception types shared across the package."""


class SDiffError(Exception):
    """Base class for all package-specific failures."""


class DataFormatError(SDiffError):
    """Raised for unreadable, malformed, or empty interaction data."""


class ConvergenceError(SDiffError):
    """Raised when the iterative eigensolver exhausts its restart budget.

    Carries the residual norms achieved so far in ``residuals``.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class HashMismatchError(SDiffError):
    """Raised when artifacts built from different interaction data are combined."""


class ProtocolError(SDiffError):
    """Raised when an evaluation protocol rule is violated (e.g. a recommender
    returns items the user already interacted with)."""


class ArtifactError(SDiffError):
    """Raised for corrupt or incompatible artifact files (bad magic, version)."""
