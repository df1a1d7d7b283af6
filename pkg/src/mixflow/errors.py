"""Exception types used for solver control flow and configuration errors."""


class MixflowError(Exception):
    """Base class for package errors."""


class ConfigError(MixflowError):
    """Invalid run configuration (exit code 2 at the CLI)."""


class SolverError(MixflowError):
    """A solver failed to produce an accepted step (exit code 3)."""


class NewtonError(SolverError):
    """Newton iteration did not reach its residual tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PicardError(SolverError):
    """Reaction fixed-point coupling did not converge."""


class CFLError(SolverError):
    """Explicit step size exceeds the diffusion stability limit."""
