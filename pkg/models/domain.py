"""Data models shared by all detector simulations."""

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np


SIDES = ('left', 'right', 'bulk')


def _frozen_array(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform 1D grid on [x_min, x_max], endpoints included."""
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError(f"x_max ({self.x_max}) must exceed x_min ({self.x_min})")
        if self.n_points < 3:
            raise ValueError(f"n_points must be at least 3, got {self.n_points}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def x(self) -> np.ndarray:
        nodes = self.x_min + np.arange(self.n_points) * self.dx
        nodes[-1] = self.x_max
        return nodes

    def node(self, i: int) -> float:
        if i == self.n_points - 1:
            return self.x_max
        return self.x_min + i * self.dx

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal end weights (1/2, 1, ..., 1, 1/2)."""
        w = np.ones(self.n_points)
        w[0] = w[-1] = 0.5
        return w

    def index_of(self, x: float) -> int:
        """Index of the node nearest to x, clipped to the grid."""
        i = int(round((x - self.x_min) / self.dx))
        return min(max(i, 0), self.n_points - 1)

    def extended_right(self, n_cells: int) -> 'SpatialGrid':
        """Same spacing, grown by n_cells beyond x_max."""
        return SpatialGrid(self.x_min, self.x_max + n_cells * self.dx, self.n_points + n_cells)

    def contains(self, x: float) -> bool:
        return self.x_min <= x <= self.x_max


@dataclass(frozen=True)
class PhysicalConstants:
    """hbar and particle mass; natural units by default."""
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if self.hbar <= 0 or self.mass <= 0:
            raise ValueError("hbar and mass must be strictly positive")


@dataclass(frozen=True)
class WaveFunction:
    """Complex amplitudes on a SpatialGrid. Not necessarily normalized."""
    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values, complex)
        if values.shape != (self.grid.n_points,):
            raise ValueError(
                f"expected {self.grid.n_points} amplitudes, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("wave function contains NaN or Inf")
        object.__setattr__(self, 'values', values)

    def with_values(self, values: np.ndarray) -> 'WaveFunction':
        return WaveFunction(self.grid, values)

    def padded_right(self, n_cells: int) -> 'WaveFunction':
        """Zero-extend onto grid.extended_right(n_cells)."""
        values = np.concatenate([self.values, np.zeros(n_cells, dtype=complex)])
        return WaveFunction(self.grid.extended_right(n_cells), values)


@dataclass(frozen=True)
class DetectorProfile:
    """
    Everything that defines a detector model on a grid.

    Attributes:
        V: potential energy at each node
        lam: absorption / collapse rate lambda(x) at each node (1/time)
        kappa_left, kappa_right: absorbing-boundary wavenumbers, if any
        sigma: GRW collapse width
        lambda0: constant GRW collapse rate
    """
    V: np.ndarray
    lam: np.ndarray
    sigma: float
    kappa_left: Optional[float] = None
    kappa_right: Optional[float] = None
    lambda0: float = 0.0

    def __post_init__(self):
        V = _frozen_array(self.V, float)
        lam = _frozen_array(self.lam, float)
        if V.shape != lam.shape:
            raise ValueError("V and lam must be sampled on the same nodes")
        if np.any(lam < 0):
            raise ValueError("lam must be nonnegative everywhere")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        for name in ('kappa_left', 'kappa_right'):
            kappa = getattr(self, name)
            if kappa is not None and kappa <= 0:
                raise ValueError(f"{name} must be positive, got {kappa}")
        if self.lambda0 < 0:
            raise ValueError(f"lambda0 must be nonnegative, got {self.lambda0}")
        object.__setattr__(self, 'V', V)
        object.__setattr__(self, 'lam', lam)

    @classmethod
    def free(cls, grid: SpatialGrid, sigma: Optional[float] = None, **kwargs) -> 'DetectorProfile':
        """No potential, no absorption; sigma defaults to 5 dx."""
        zeros = np.zeros(grid.n_points)
        return cls(V=zeros, lam=zeros, sigma=sigma if sigma is not None else 5 * grid.dx, **kwargs)

    def with_rate(self, lam: np.ndarray) -> 'DetectorProfile':
        return replace(self, lam=lam)

    def padded_right(self, n_cells: int) -> 'DetectorProfile':
        """Extend V by its edge value and lam by zeros."""
        V = np.concatenate([self.V, np.full(n_cells, self.V[-1])])
        lam = np.concatenate([self.lam, np.zeros(n_cells)])
        return replace(self, V=V, lam=lam)


@dataclass(frozen=True)
class Detected:
    """A detection at time T and position X."""
    time: float
    position: float
    side: str = 'bulk'

    def __post_init__(self):
        if self.time < 0:
            raise ValueError(f"detection time must be nonnegative, got {self.time}")
        if self.side not in SIDES:
            raise ValueError(f"unknown side {self.side!r}")


@dataclass(frozen=True)
class NeverDetected:
    """The outcome Z = infinity."""


DetectionOutcome = Union[Detected, NeverDetected]


@dataclass(frozen=True)
class DetectionDistribution:
    """
    Time-binned, side-resolved detection probabilities.

    mass[side][k] is the probability of a detection on `side` with
    time_edges[k] <= T < time_edges[k + 1]. p_never is the mass still
    undetected at the last edge; truncation_remainder closes the budget.
    """
    time_edges: np.ndarray
    mass_left: np.ndarray
    mass_right: np.ndarray
    p_never: float
    mass_bulk: Optional[np.ndarray] = None
    truncation_remainder: float = 0.0
    tail_flux: float = 0.0

    def __post_init__(self):
        edges = _frozen_array(self.time_edges, float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("time_edges must be strictly increasing with at least two entries")
        n_bins = edges.size - 1
        object.__setattr__(self, 'time_edges', edges)
        for name in ('mass_left', 'mass_right', 'mass_bulk'):
            masses = getattr(self, name)
            if masses is None:
                continue
            masses = _frozen_array(masses, float)
            if masses.shape != (n_bins,):
                raise ValueError(f"{name} must have one entry per time bin")
            if np.any(masses < 0):
                raise ValueError(f"{name} contains negative probability mass")
            object.__setattr__(self, name, masses)
        if not -1e-12 <= self.p_never <= 1 + 1e-6:
            raise ValueError(f"p_never outside [0, 1]: {self.p_never}")

    @property
    def n_bins(self) -> int:
        return self.time_edges.size - 1

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.time_edges[:-1] + self.time_edges[1:])

    @property
    def total_by_bin(self) -> np.ndarray:
        total = self.mass_left + self.mass_right
        if self.mass_bulk is not None:
            total = total + self.mass_bulk
        return total

    @property
    def detected_mass(self) -> float:
        return float(self.total_by_bin.sum())

    def side_mass(self, side: str) -> float:
        masses = getattr(self, f'mass_{side}')
        return 0.0 if masses is None else float(masses.sum())

    def closure_error(self) -> float:
        return abs(self.detected_mass + self.p_never + self.truncation_remainder - 1.0)


@dataclass
class RunSummary:
    """Scalar results written next to a distribution."""
    model: str
    detected_mass: float
    p_never: float
    truncation_remainder: float
    mean_detection_time: Optional[float]
    extras: dict = field(default_factory=dict)
