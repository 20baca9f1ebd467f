"""Exception hierarchy shared by all modules."""


class ConfigError(ValueError):
    """Invalid scenario or experiment configuration."""


class NumericalError(RuntimeError):
    """Base class for numerical failures (CLI exit code 3)."""


class SingularChannelError(NumericalError):
    """Channel Gram matrix too ill-conditioned for zero-forcing."""


class NumericalDegeneracyError(NumericalError):
    """Too many singular channel draws in a Monte-Carlo run."""


class InfeasibleError(NumericalError):
    """Subproblem has no strictly feasible point."""


class NonConvergenceError(NumericalError):
    """Iteration limit reached; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
