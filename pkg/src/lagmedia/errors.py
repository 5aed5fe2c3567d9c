"""Exception hierarchy shared by all modules."""


class LagMediaError(Exception):
    """Base class for errors raised by :mod:`lagmedia`."""


class ConstructionError(LagMediaError, ValueError):
    """Invalid lattice, grid or initial data."""


class FoldingError(LagMediaError):
    """The flow map lost orientation (det A <= 0) at some label.

    ``label`` holds the lattice index of the first offending label and
    ``last_valid`` is filled in by integrators with the last good snapshot.
    """

    def __init__(self, message, label=None, last_valid=None):
        super().__init__(message)
        self.label = label
        self.last_valid = last_valid


class InverseError(LagMediaError):
    """Newton inversion of the flow map did not converge."""


class OutOfDomain(LagMediaError, ValueError):
    """A position lies outside the map image or outside a clamped grid."""


class VacuumError(LagMediaError):
    """Density vanishes where a finite velocity/vorticity is required."""


class GridMismatch(LagMediaError, ValueError):
    """Fields live on different grids."""


class ConfigError(LagMediaError):
    """Scenario file could not be parsed or validated."""
