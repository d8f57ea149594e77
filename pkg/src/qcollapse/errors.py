"""Exception types raised by qcollapse."""


class ConfigError(ValueError):
    """Invalid model, grid, coupling or run configuration."""


class DegenerateKernelError(ValueError):
    """A compact kernel with zero range (it would silently zero the nonlocal term)."""


class DegenerateStateError(ValueError):
    """Total weight too small to classify an outcome."""


class NumericalBlowupError(FloatingPointError):
    """NaN or Inf appeared while solving."""


class EnsembleError(RuntimeError):
    """Every realization of an ensemble diverged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
