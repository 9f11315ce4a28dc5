"""
GRW collapse process with constant or position-dependent rate.

Between collapses the constant-rate process evolves unitarily and collapse
times form a Poisson process. With a position-dependent rate the
unnormalized state follows the non-unitary semigroup, its squared norm is
the survival probability, and collapse times are drawn by inverting it.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, TypeVar, Union

import numpy as np

from models.domain import (
    DetectionDistribution,
    DetectionOutcome,
    Detected,
    DetectorProfile,
    NeverDetected,
    SpatialGrid,
    WaveFunction,
)
from models.errors import CollapseError
from models.observables import gaussian_convolve, gaussian_density, integrate, squared_norm
from simulators.propagator import (
    Absorbing,
    CrankNicolsonStepper,
    PropagatorConfig,
    assemble,
)


logger = logging.getLogger("simulator.grw")

JUMP_MODES = ('gaussian_root', 'rate_operator')
PROCESS_MODES = ('constant', 'position')

T = TypeVar('T')
RandomSource = Union[int, np.random.Generator]


@dataclass(frozen=True)
class CollapseEvent:
    """
    One jump of the process.

    pre_norm is ||Psi||^2 of the unnormalized state whose rate density
    chose the centre; center_mass is the integral of g * |Psi|^2 over the
    grid, equal to pre_norm when the state is far from the edges.
    """
    time: float
    center: float
    pre_norm: float
    center_mass: float


@dataclass
class GrwRunRecord:
    events: List[CollapseEvent]
    final_state: WaveFunction
    seed: Optional[int]
    rate_vanished: bool = False

    @property
    def event_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events])

    @property
    def n_events(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class ConstantRate:
    """Lambda(x) psi(y) = lambda0 g(x - y) psi(y)."""
    lambda0: float

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ValueError(f"lambda0 must be nonnegative, got {self.lambda0}")

    def rate_at(self, grid: SpatialGrid) -> np.ndarray:
        return np.full(grid.n_points, self.lambda0)

    def value_at(self, grid: SpatialGrid, x: float) -> float:
        return self.lambda0


@dataclass(frozen=True)
class PositionDependent:
    """Lambda(x) psi(y) = lambda(x) g(x - y) psi(y) with lambda sampled on the grid."""
    lam: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float, copy=True)
        if np.any(lam < 0):
            raise ValueError("collapse rates must be nonnegative")
        lam.setflags(write=False)
        object.__setattr__(self, 'lam', lam)

    def rate_at(self, grid: SpatialGrid) -> np.ndarray:
        return self.lam

    def value_at(self, grid: SpatialGrid, x: float) -> float:
        return float(np.interp(x, grid.x, self.lam))


RateOperatorKind = Union[ConstantRate, PositionDependent]


@dataclass(frozen=True)
class GrwOptions:
    """
    mode: 'constant' (Poisson times, unitary flow) or 'position' (semigroup)
    jump_mode: 'gaussian_root' multiplies by g^(1/2); 'rate_operator' by Lambda(X)
    smeared_absorption: generate the semigroup with lambda * g instead of lambda
    """
    mode: str = 'position'
    jump_mode: str = 'gaussian_root'
    smeared_absorption: bool = False

    def __post_init__(self):
        if self.mode not in PROCESS_MODES:
            raise ValueError(f"mode must be one of {PROCESS_MODES}, got {self.mode!r}")
        if self.jump_mode not in JUMP_MODES:
            raise ValueError(f"jump_mode must be one of {JUMP_MODES}, got {self.jump_mode!r}")


def rate_kind(profile: DetectorProfile, options: GrwOptions) -> RateOperatorKind:
    if options.mode == 'constant':
        return ConstantRate(profile.lambda0)
    return PositionDependent(profile.lam)


def _as_generator(rng: RandomSource) -> Tuple[np.random.Generator, Optional[int]]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(int(rng)), int(rng)


def collapse_rate_density(psi: WaveFunction, kind: RateOperatorKind, sigma: float) -> np.ndarray:
    """lambda(x) (g * |Psi|^2)(x); its integral is the total collapse rate."""
    smeared = gaussian_convolve(psi.grid, np.abs(psi.values) ** 2, sigma)
    return kind.rate_at(psi.grid) * smeared


def sample_from_density(x: np.ndarray, density: np.ndarray, rng: np.random.Generator) -> float:
    """
    Inverse-CDF draw from nodal density values on uniformly spaced nodes x.

    The CDF is linear inside each cell, so the draw is uniform inside the
    chosen cell.
    """
    dx = x[1] - x[0]
    cells = 0.5 * (density[:-1] + density[1:]) * dx
    cdf = np.cumsum(cells)
    total = cdf[-1] if cdf.size else 0.0
    if not total > 0:
        raise CollapseError("collapse rate density vanishes everywhere")
    u = rng.random() * total
    i = min(int(np.searchsorted(cdf, u, side='right')), cells.size - 1)
    below = cdf[i - 1] if i > 0 else 0.0
    frac = (u - below) / cells[i] if cells[i] > 0 else 0.5
    return float(x[i] + min(max(frac, 0.0), 1.0) * dx)


def sample_collapse_center(psi: WaveFunction, kind: RateOperatorKind, sigma: float,
                           rng: np.random.Generator) -> float:
    """Draw a collapse centre with density proportional to lambda(x) (g * |Psi|^2)(x)."""
    return sample_from_density(psi.grid.x, collapse_rate_density(psi, kind, sigma), rng)


def apply_collapse(psi: WaveFunction, center: float, kind: RateOperatorKind, sigma: float,
                   jump_mode: str = 'gaussian_root') -> WaveFunction:
    """
    Localize psi around `center` and renormalize.

    'gaussian_root' multiplies by g(x - center)^(1/2); 'rate_operator'
    multiplies by Lambda(center), i.e. lambda(center) g(x - center).
    """
    offsets = psi.grid.x - center
    if jump_mode == 'gaussian_root':
        factor = np.sqrt(gaussian_density(offsets, sigma))
    elif jump_mode == 'rate_operator':
        factor = kind.value_at(psi.grid, center) * gaussian_density(offsets, sigma)
    else:
        raise ValueError(f"unknown jump_mode {jump_mode!r}")
    values = factor * psi.values
    norm2 = integrate(psi.grid, np.abs(values) ** 2)
    if not np.isfinite(norm2) or norm2 <= 0:
        raise CollapseError(f"post-collapse state at x={center:.6g} has zero norm")
    return psi.with_values(values / np.sqrt(norm2))


def _collapse_event(time: float, state: WaveFunction, kind: RateOperatorKind, sigma: float,
                    rng: np.random.Generator) -> CollapseEvent:
    density_state = np.abs(state.values) ** 2
    center_mass = integrate(state.grid, gaussian_convolve(state.grid, density_state, sigma))
    center = sample_collapse_center(state, kind, sigma, rng)
    return CollapseEvent(time=time, center=center, pre_norm=squared_norm(state),
                         center_mass=center_mass)


def _check_reflecting(config: PropagatorConfig):
    if any(isinstance(bc, Absorbing) for bc in config.boundaries):
        raise ValueError("the GRW process is simulated with reflecting or Dirichlet walls")


def absorption_profile(profile: DetectorProfile, grid: SpatialGrid, options: GrwOptions) -> np.ndarray:
    """The multiplication operator generating the between-collapse semigroup."""
    if options.smeared_absorption:
        return gaussian_convolve(grid, profile.lam, profile.sigma)
    return np.array(profile.lam, copy=True)


def _log_interpolated_time(t0: float, t1: float, s0: float, s1: float, threshold: float) -> float:
    """Time at which log-survival, linear inside the step, reaches log(threshold)."""
    tiny = np.finfo(float).tiny
    l0, l1, lt = np.log(max(s0, tiny)), np.log(max(s1, tiny)), np.log(max(threshold, tiny))
    if l1 >= l0:
        return t1
    frac = min(max((lt - l0) / (l1 - l0), 0.0), 1.0)
    return t0 + frac * (t1 - t0)


def run_grw(
    psi0: WaveFunction,
    profile: DetectorProfile,
    config: PropagatorConfig,
    rng: RandomSource,
    options: GrwOptions = GrwOptions(),
    eps_tol: float = 1e-8,
) -> GrwRunRecord:
    """
    Simulate one trajectory of the collapse process up to t_max.

    Args:
        psi0: normalized initial state
        profile: potential, rates, sigma and lambda0
        config: time step, t_max and (reflecting) walls
        rng: seed or generator
        options: process variant and jump convention

    Returns:
        GrwRunRecord with the ordered collapse events and final state
    """
    _check_reflecting(config)
    if abs(squared_norm(psi0) - 1.0) > eps_tol:
        raise ValueError("run_grw needs a normalized initial state")
    generator, seed = _as_generator(rng)
    kind = rate_kind(profile, options)
    if options.mode == 'constant':
        return _run_constant(psi0, profile, config, generator, seed, kind, options)
    return _run_position_dependent(psi0, profile, config, generator, seed, kind, options)


def _poisson_times(rate: float, t_max: float, rng: np.random.Generator) -> List[float]:
    times = []
    if rate <= 0:
        return times
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > t_max:
            return times
        times.append(t)


def _run_constant(psi0, profile, config, rng, seed, kind, options) -> GrwRunRecord:
    grid = psi0.grid
    sigma = profile.sigma
    op = assemble(grid, profile.with_rate(np.zeros(grid.n_points)), config.boundaries, config.consts)
    stepper = CrankNicolsonStepper(op, config.dt)
    pending = _poisson_times(kind.lambda0, config.t_max, rng)
    events = []
    state = psi0
    n_steps = config.n_steps
    for k in range(n_steps):
        state = state.with_values(stepper.advance(state.values))
        t_end = (k + 1) * config.dt if k < n_steps - 1 else np.inf
        while pending and pending[0] <= t_end:
            event = _collapse_event(pending.pop(0), state, kind, sigma, rng)
            events.append(event)
            state = apply_collapse(state, event.center, kind, sigma, options.jump_mode)
    logger.debug(f"constant-rate run (seed={seed}): {len(events)} collapses")
    return GrwRunRecord(events=events, final_state=state, seed=seed,
                        rate_vanished=kind.lambda0 == 0)


def _run_position_dependent(psi0, profile, config, rng, seed, kind, options) -> GrwRunRecord:
    grid = psi0.grid
    sigma = profile.sigma
    absorbing = absorption_profile(profile, grid, options)
    op = assemble(grid, profile.with_rate(absorbing), config.boundaries, config.consts)
    stepper = CrankNicolsonStepper(op, config.dt)
    weights = grid.weights * grid.dx

    values = psi0.values.copy()
    survival = 1.0
    threshold = rng.random()
    events = []
    for k in range(config.n_steps):
        t0, t1 = k * config.dt, (k + 1) * config.dt
        new_values = stepper.advance(values)
        new_survival = float(np.sum(weights * np.abs(new_values) ** 2))
        if new_survival < threshold:
            time = _log_interpolated_time(t0, t1, survival, new_survival, threshold)
            midpoint = psi0.with_values(0.5 * (values + new_values))
            event = _collapse_event(time, midpoint, kind, sigma, rng)
            events.append(event)
            collapsed = apply_collapse(psi0.with_values(new_values), event.center, kind,
                                       sigma, options.jump_mode)
            new_values = collapsed.values.copy()
            new_survival = 1.0
            threshold = rng.random()
        values, survival = new_values, new_survival

    final = psi0.with_values(values)
    remaining_rate = float(np.sum(weights * absorbing * np.abs(values) ** 2))
    if remaining_rate == 0.0:
        logger.warning(f"collapse rate vanished (seed={seed}); no further events are possible")
    logger.debug(f"position-dependent run (seed={seed}): {len(events)} collapses")
    return GrwRunRecord(events=events, final_state=final, seed=seed,
                        rate_vanished=remaining_rate == 0.0)


@dataclass
class SemigroupPath:
    """
    The deterministic pre-detection evolution, shared by all trajectories.

    survival[j] = ||Psi_{t_j}||^2; densities[j] is the collapse-rate density
    of the midpoint state of step j restricted to nodes[lo:hi].
    """
    grid: SpatialGrid
    times: np.ndarray
    survival: np.ndarray
    densities: np.ndarray
    lo: int
    hi: int
    final_state: Optional[WaveFunction] = None
    side: str = 'bulk'

    def sample(self, rng: np.random.Generator) -> DetectionOutcome:
        threshold = rng.random() * self.survival[0]
        if not self.survival[-1] < threshold:
            return NeverDetected()
        j = int(np.argmax(self.survival < threshold))
        time = _log_interpolated_time(self.times[j - 1], self.times[j],
                                      self.survival[j - 1], self.survival[j], threshold)
        x = self.grid.x[self.lo:self.hi]
        position = sample_from_density(x, self.densities[j - 1], rng)
        return Detected(time=time, position=position, side=self.side)


def trace_semigroup(
    psi0: WaveFunction,
    profile: DetectorProfile,
    config: PropagatorConfig,
    options: GrwOptions = GrwOptions(),
    side: str = 'bulk',
    eps_tol: float = 1e-8,
) -> SemigroupPath:
    """Evolve the unnormalized state once and record survival and rate densities."""
    _check_reflecting(config)
    if abs(squared_norm(psi0) - 1.0) > eps_tol:
        raise ValueError("the semigroup path needs a normalized initial state")
    grid = psi0.grid
    kind = PositionDependent(profile.lam)
    active = np.flatnonzero(profile.lam > 0)
    if active.size:
        lo, hi = max(int(active[0]) - 1, 0), min(int(active[-1]) + 2, grid.n_points)
    else:
        lo, hi = 0, grid.n_points
    absorbing = absorption_profile(profile, grid, options)
    op = assemble(grid, profile.with_rate(absorbing), config.boundaries, config.consts)
    stepper = CrankNicolsonStepper(op, config.dt)
    weights = grid.weights * grid.dx

    n_steps = config.n_steps
    survival = np.empty(n_steps + 1)
    densities = np.empty((n_steps, hi - lo))
    values = psi0.values.copy()
    survival[0] = float(np.sum(weights * np.abs(values) ** 2))
    for k in range(n_steps):
        new_values = stepper.advance(values)
        survival[k + 1] = float(np.sum(weights * np.abs(new_values) ** 2))
        midpoint = psi0.with_values(0.5 * (values + new_values))
        densities[k] = collapse_rate_density(midpoint, kind, profile.sigma)[lo:hi]
        values = new_values
    times = np.arange(n_steps + 1) * config.dt
    return SemigroupPath(grid=grid, times=times, survival=survival, densities=densities,
                         lo=lo, hi=hi, final_state=psi0.with_values(values), side=side)


def first_detection(
    psi0: WaveFunction,
    profile: DetectorProfile,
    config: PropagatorConfig,
    rng: RandomSource,
    options: GrwOptions = GrwOptions(),
    eps_tol: float = 1e-8,
) -> DetectionOutcome:
    """
    Run the position-dependent process up to its first collapse.

    Returns Detected(T, X) or NeverDetected when ||Psi_{t_max}||^2 stays
    above the uniform draw.
    """
    generator, _ = _as_generator(rng)
    return trace_semigroup(psi0, profile, config, options, eps_tol=eps_tol).sample(generator)


def run_ensemble(task: Callable[[int], T], n: int, base_seed: int = 0, workers: int = 1) -> List[T]:
    """Run task(base_seed + i) for i < n; results come back in index order."""
    seeds = [base_seed + i for i in range(n)]
    if workers <= 1:
        return [task(seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, seeds))


def grw_ensemble(psi0, profile, config, n: int, base_seed: int = 0,
                 options: GrwOptions = GrwOptions(), workers: int = 1,
                 eps_tol: float = 1e-8) -> List[GrwRunRecord]:
    return run_ensemble(lambda seed: run_grw(psi0, profile, config, seed, options, eps_tol),
                        n, base_seed, workers)


def first_detection_ensemble(psi0, profile, config, n: int, base_seed: int = 0,
                             options: GrwOptions = GrwOptions(), workers: int = 1,
                             path: Optional[SemigroupPath] = None,
                             eps_tol: float = 1e-8) -> List[DetectionOutcome]:
    """
    n first-detection outcomes; member i equals first_detection(..., rng=base_seed + i).

    A precomputed `path` for the same inputs skips the semigroup evolution.
    """
    if path is None:
        path = trace_semigroup(psi0, profile, config, options, eps_tol=eps_tol)
    logger.info(f"first-detection ensemble: n={n}, survival at t_max={path.survival[-1]:.6f}")
    return run_ensemble(lambda seed: path.sample(np.random.default_rng(seed)),
                        n, base_seed, workers)


def outcomes_distribution(outcomes: List[DetectionOutcome], edges: np.ndarray) -> DetectionDistribution:
    """Empirical detection-time distribution of an outcome list (bulk side)."""
    n = len(outcomes)
    if n == 0:
        raise ValueError("no outcomes to bin")
    times = np.array([o.time for o in outcomes if isinstance(o, Detected)])
    counts, _ = np.histogram(np.clip(times, edges[0], edges[-1]), bins=edges)
    zeros = np.zeros(edges.size - 1)
    return DetectionDistribution(
        time_edges=edges,
        mass_left=zeros,
        mass_right=zeros,
        mass_bulk=counts / n,
        p_never=(n - times.size) / n,
    )
