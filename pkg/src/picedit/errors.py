"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class PicEditError(Exception):
    exit_code = 1


class ConfigurationError(PicEditError):
    """Invalid configuration values (step counts, hyperparameters, paths)."""

    exit_code = 1


class ValidationError(PicEditError):
    """Shape/span/contract violations on otherwise well-formed inputs."""

    exit_code = 1


class UnsupportedEditError(ValidationError):
    """Prompt pair whose diff cannot be auto-converted into a plan."""


class NumericalFailureError(PicEditError):
    """Non-finite values encountered mid-computation."""

    exit_code = 2

    def __init__(self, message, step=None, branch=None):
        if step is not None:
            message = f"{message} (step={step}" + (f", branch={branch})" if branch else ")")
        super().__init__(message)
        self.step = step
        self.branch = branch


class ModelUnavailableError(PicEditError):
    """A required model backend or weight file is not available."""

    exit_code = 3
