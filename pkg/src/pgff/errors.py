"""Exception and warning types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class RankDeficientError(ArithmeticError):
    """Raised when a regressor matrix does not have full column rank.

    Attributes
    ----------
    sigma_min, sigma_max : float
        Smallest and largest singular value of the offending matrix.
    """

    def __init__(self, message, sigma_min=float("nan"), sigma_max=float("nan")):
        super().__init__(message)
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max


class SimulationError(RuntimeError):
    """Raised when the nonlinear plant recursion fails at a given sample."""

    def __init__(self, message, index=-1):
        super().__init__(message)
        self.index = index


class SolverDivergedError(RuntimeError):
    """Raised when an inner minimization produces a non-finite objective.

    The partially filled solver state is attached for post-mortem inspection.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class StabilityWarning(RuntimeWarning):
    """Emitted when ``1/B`` has a pole on or outside the unit circle."""
