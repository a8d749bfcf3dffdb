"""Exception types shared across the package."""


class SurfpdeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SurfpdeError):
    """Invalid or inconsistent configuration values."""


class NodeFileError(SurfpdeError):
    """Malformed node file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SamplingError(SurfpdeError):
    """Surface sampling produced too few usable points."""


class SingularMatrixError(SurfpdeError):
    """Exactly singular factorization; carries the pivot index when known."""

    def __init__(self, message, pivot=None):
        if pivot is not None:
            message = f"{message} (pivot {pivot})"
        super().__init__(message)
        self.pivot = pivot


class StencilAssemblyError(SurfpdeError):
    """Weight computation failed for one stencil; message names the stencil."""


class BasisConstructionError(SurfpdeError):
    """Polynomial basis construction could not produce a usable basis."""


class DivergenceError(SurfpdeError):
    """Time integration produced non-finite values; carries the step index."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step
