"""Exception hierarchy shared across the package."""


class ShapeDiffError(Exception):
    """Base class for all package-specific errors."""


class MeshFormatError(ShapeDiffError):
    """Mesh file could not be parsed.  Carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TopologyError(ShapeDiffError):
    """Mesh violates a topological requirement (e.g. multiple components)."""


class DegeneracyError(ShapeDiffError):
    """Geometric degeneracy (zero area, collapsed triangle, dead spectrum)."""


class SolverError(ShapeDiffError):
    """Eigensolver failed to converge to the requested residual."""


class SingularityError(ShapeDiffError):
    """A linear solve hit a (numerically) singular system."""


class ConfigurationError(ShapeDiffError):
    """Inconsistent configuration, e.g. network width vs. grouping mismatch."""


class TrainingError(ShapeDiffError):
    """Non-finite loss or similar failure during an optimization loop."""


class SamplingError(ShapeDiffError):
    """Non-finite intermediate during reverse-process sampling."""
