"""Crank-Nicolson propagation of the Schrodinger equation with absorption."""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from models.domain import DetectorProfile, PhysicalConstants, SpatialGrid, WaveFunction
from models.errors import SingularSystemError
from models.observables import integrate, squared_norm


logger = logging.getLogger("simulator.propagator")


@dataclass(frozen=True)
class Dirichlet:
    """psi = 0 at the boundary node."""


@dataclass(frozen=True)
class Neumann:
    """n . grad psi = 0 (reflecting wall)."""


@dataclass(frozen=True)
class Robin:
    """n . grad psi = alpha psi with real alpha (reflecting wall)."""
    alpha: float = 0.0


@dataclass(frozen=True)
class Absorbing:
    """
    n . grad psi = (i kappa + shift) psi, the ideal detector.

    The real shift leaves the outward flux (hbar kappa / m) |psi|^2
    unchanged. It carries the 1/R term when the wall is a sphere of
    radius R seen through u = r psi.
    """
    kappa: float
    shift: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"absorbing kappa must be positive, got {self.kappa}")


BoundaryCondition = Union[Dirichlet, Neumann, Robin, Absorbing]


def ghost_coefficient(bc: BoundaryCondition) -> Optional[complex]:
    """beta in n . grad psi = beta psi, or None for Dirichlet."""
    if isinstance(bc, Dirichlet):
        return None
    if isinstance(bc, Neumann):
        return 0.0
    if isinstance(bc, Robin):
        return float(bc.alpha)
    if isinstance(bc, Absorbing):
        return bc.shift + 1j * bc.kappa
    raise TypeError(f"unknown boundary condition {bc!r}")


@dataclass(frozen=True)
class TridiagonalOperator:
    """
    Discretized H - (i hbar / 2) lambda(x).

    lower[i] couples row i to node i - 1 (lower[0] is unused), upper[i]
    couples row i to node i + 1 (upper[-1] is unused).
    """
    lower: np.ndarray
    diagonal: np.ndarray
    upper: np.ndarray
    hbar: float = 1.0

    @property
    def size(self) -> int:
        return self.diagonal.size

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diagonal * v
        out[1:] += self.lower[1:] * v[:-1]
        out[:-1] += self.upper[:-1] * v[1:]
        return out

    def to_dense(self) -> np.ndarray:
        return (np.diag(self.diagonal)
                + np.diag(self.lower[1:], -1)
                + np.diag(self.upper[:-1], 1))


@dataclass(frozen=True)
class PropagatorConfig:
    """Time stepping and boundary setup for one simulation."""
    dt: float
    t_max: float
    bc_left: BoundaryCondition = field(default_factory=Neumann)
    bc_right: BoundaryCondition = field(default_factory=Neumann)
    consts: PhysicalConstants = field(default_factory=PhysicalConstants)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_max < self.dt:
            raise ValueError(f"t_max ({self.t_max}) must be at least dt ({self.dt})")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_max / self.dt)))

    @property
    def boundaries(self) -> Tuple[BoundaryCondition, BoundaryCondition]:
        return self.bc_left, self.bc_right

    def with_boundaries(self, bc_left=None, bc_right=None) -> 'PropagatorConfig':
        return PropagatorConfig(
            dt=self.dt,
            t_max=self.t_max,
            bc_left=bc_left if bc_left is not None else self.bc_left,
            bc_right=bc_right if bc_right is not None else self.bc_right,
            consts=self.consts,
        )


def default_resolution(k_max: float, consts: PhysicalConstants = PhysicalConstants(),
                       nodes_per_wavelength: int = 20) -> Tuple[float, float]:
    """(dx, dt) with the given nodes per de Broglie wavelength and dt = dx^2 m / hbar."""
    if k_max <= 0:
        raise ValueError(f"k_max must be positive, got {k_max}")
    dx = 2.0 * np.pi / (nodes_per_wavelength * k_max)
    return dx, dx ** 2 * consts.mass / consts.hbar


def assemble(
    grid: SpatialGrid,
    profile: DetectorProfile,
    bc: Tuple[BoundaryCondition, BoundaryCondition],
    consts: PhysicalConstants = PhysicalConstants(),
) -> TridiagonalOperator:
    """
    Three-point discretization of -(hbar^2/2m) d^2/dx^2 + V - (i hbar/2) lambda.

    Boundary rows eliminate a ghost node with a centred difference of
    n . grad psi = beta psi, which doubles the off-diagonal coupling. The
    result is self-adjoint in the trapezoidal inner product whenever beta
    is real and lambda vanishes. Dirichlet rows are decoupled.
    """
    n = grid.n_points
    if profile.V.shape != (n,):
        raise ValueError("detector profile is not sampled on this grid")
    dx = grid.dx
    kinetic = consts.hbar ** 2 / (2.0 * consts.mass * dx ** 2)

    diagonal = 2.0 * kinetic + profile.V - 0.5j * consts.hbar * profile.lam
    diagonal = diagonal.astype(complex)
    lower = np.full(n, -kinetic, dtype=complex)
    upper = np.full(n, -kinetic, dtype=complex)
    lower[0] = 0.0
    upper[-1] = 0.0

    for side, condition in zip(('left', 'right'), bc):
        node, inner = (0, 1) if side == 'left' else (n - 1, n - 2)
        beta = ghost_coefficient(condition)
        if beta is None:
            if side == 'left':
                upper[0] = 0.0
                lower[1] = 0.0
            else:
                lower[-1] = 0.0
                upper[-2] = 0.0
            continue
        diagonal[node] -= 2.0 * kinetic * dx * beta
        if side == 'left':
            upper[node] = -2.0 * kinetic
        else:
            lower[node] = -2.0 * kinetic
        logger.debug(f"{side} boundary row at node {node} (neighbour {inner}), beta={beta}")

    return TridiagonalOperator(lower=lower, diagonal=diagonal, upper=upper, hbar=consts.hbar)


class CrankNicolsonStepper:
    """Caches the banded left-hand matrix for repeated steps of one operator."""

    def __init__(self, op: TridiagonalOperator, dt: float):
        self.op = op
        self.dt = dt
        self._factor = 0.5j * dt / op.hbar
        ab = np.zeros((3, op.size), dtype=complex)
        ab[0, 1:] = self._factor * op.upper[:-1]
        ab[1, :] = 1.0 + self._factor * op.diagonal
        ab[2, :-1] = self._factor * op.lower[1:]
        self._banded = ab

    def advance(self, values: np.ndarray) -> np.ndarray:
        rhs = values - self._factor * self.op.matvec(values)
        try:
            result = solve_banded((1, 1), self._banded, rhs, check_finite=False)
        except (LinAlgError, ValueError) as e:
            raise SingularSystemError(
                f"tridiagonal solve failed (dt={self.dt}); check the dt/dx combination: {e}"
            ) from e
        if not np.all(np.isfinite(result)):
            raise SingularSystemError(f"non-finite amplitudes after a step with dt={self.dt}")
        return result


def step(psi: WaveFunction, op: TridiagonalOperator, dt: float) -> WaveFunction:
    """One Crank-Nicolson step (1 + i dt op / 2 hbar) psi' = (1 - i dt op / 2 hbar) psi."""
    if op.size != psi.grid.n_points:
        raise ValueError("operator and wave function sizes differ")
    return psi.with_values(CrankNicolsonStepper(op, dt).advance(psi.values))


# An observer sees (t_before, t_after, psi_before, psi_after) for every step.
Observer = Callable[[float, float, np.ndarray, np.ndarray], Any]


@dataclass
class EvolutionResult:
    final: WaveFunction
    times: np.ndarray
    series: List[Any]


def norm_observer(grid: SpatialGrid) -> Observer:
    """Squared norm after each step."""
    weights = grid.weights * grid.dx

    def observe(t0, t1, before, after):
        return float(np.sum(weights * np.abs(after) ** 2))

    return observe


def boundary_flux_observer(config: PropagatorConfig) -> Observer:
    """
    Outward flux (hbar kappa / m) |psi_b|^2 per absorbing side, at the step midpoint.

    Returns (flux_left, flux_right) rates; a non-absorbing side reports 0.
    """
    factor = config.consts.hbar / config.consts.mass
    kappas = [bc.kappa if isinstance(bc, Absorbing) else 0.0 for bc in config.boundaries]

    def observe(t0, t1, before, after):
        left = 0.5 * (before[0] + after[0])
        right = 0.5 * (before[-1] + after[-1])
        return factor * kappas[0] * abs(left) ** 2, factor * kappas[1] * abs(right) ** 2

    return observe


def absorption_observer(grid: SpatialGrid, lam: np.ndarray) -> Observer:
    """Absorption rate integral of lambda |psi|^2 at the step midpoint."""
    weights = grid.weights * grid.dx * lam

    def observe(t0, t1, before, after):
        mid = 0.5 * (before + after)
        return float(np.sum(weights * np.abs(mid) ** 2))

    return observe


def evolve(
    psi0: WaveFunction,
    config: PropagatorConfig,
    profile: DetectorProfile,
    observer: Optional[Observer] = None,
    eps_tol: float = 1e-8,
    require_normalized: bool = True,
) -> EvolutionResult:
    """
    Step psi0 from t = 0 to t_max, calling `observer` after every step.

    Deterministic given its inputs. `series[k]` belongs to the step ending
    at `times[k + 1]`.
    """
    if require_normalized:
        norm2 = squared_norm(psi0)
        if abs(norm2 - 1.0) > eps_tol:
            raise ValueError(f"initial state must be normalized, ||psi0||^2 = {norm2!r}")
    op = assemble(psi0.grid, profile, config.boundaries, config.consts)
    stepper = CrankNicolsonStepper(op, config.dt)
    n_steps = config.n_steps
    times = np.arange(n_steps + 1) * config.dt
    series = []
    values = psi0.values.copy()
    for k in range(n_steps):
        new_values = stepper.advance(values)
        if observer is not None:
            series.append(observer(times[k], times[k + 1], values, new_values))
        values = new_values
    logger.debug(f"evolved {n_steps} steps of dt={config.dt} on {psi0.grid.n_points} nodes")
    return EvolutionResult(final=psi0.with_values(values), times=times, series=series)


def absorption_rate(psi: WaveFunction, lam: np.ndarray) -> float:
    """Integral of lambda |psi|^2, the instantaneous detection rate of a soft detector."""
    return integrate(psi.grid, lam * np.abs(psi.values) ** 2)
