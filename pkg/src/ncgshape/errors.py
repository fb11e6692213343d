"""Exception hierarchy used across the package."""

from __future__ import annotations


class ShapeOptError(Exception):
    """Base class for all errors raised by ncgshape."""


class AlignmentError(ShapeOptError, ValueError):
    """A nodal field does not match the vertex count of its mesh."""


class MeshError(ShapeOptError, ValueError):
    """Malformed or unsupported mesh."""


class AssemblyError(ShapeOptError):
    """Finite element assembly hit a degenerate cell."""

    def __init__(self, cell: int, area: float) -> None:
        super().__init__(f"degenerate cell {cell} (signed area {area:.3e})")
        self.cell = cell
        self.area = area


class SolverError(ShapeOptError):
    """The iterative linear solver did not converge."""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class LineSearchError(ShapeOptError):
    """The Armijo line search found no acceptable step."""


class ConfigError(ShapeOptError, ValueError):
    """Invalid run configuration."""
