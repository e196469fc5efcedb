"""Exception types shared across the package."""


class ModelError(ValueError):
    """Invalid model definition or model-file syntax."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(ValueError):
    """State vector length does not match the number of species."""


class ResourceError(RuntimeError):
    """A configured size or work cap would be exceeded."""


class InfeasibleError(RuntimeError):
    """No trajectory in the current state space connects the observations."""
