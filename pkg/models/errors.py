"""Exceptions raised by the simulators."""


class SimulationError(Exception):
    """Base class for numerical failures during a simulation."""


class SingularSystemError(SimulationError):
    """The Crank-Nicolson tridiagonal system could not be solved."""


class ConservationError(SimulationError):
    """Detected mass and surviving norm no longer add up to the initial norm."""


class CollapseError(SimulationError):
    """A collapse could not be sampled or applied (zero rate or zero norm)."""


class ResolutionError(SimulationError):
    """A detector layer is too thin for the grid to resolve."""
