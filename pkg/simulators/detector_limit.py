"""
Soft detector layers and their thin-layer limit.

A layer of thickness L and rate lambda sits beyond the right end of the
region of interest, closed by a reflecting wall. As L shrinks with
lambda L = hbar kappa / m held fixed, its detection statistics approach
those of the absorbing boundary rule with parameter kappa.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from models.domain import DetectionDistribution, DetectorProfile, PhysicalConstants, SpatialGrid, WaveFunction
from models.errors import ResolutionError
from models.observables import kolmogorov_distance, total_variation
from simulators.abr_detection import DEFAULT_BINS, abr_distribution, detection_distribution
from simulators.propagator import Absorbing, Neumann, PropagatorConfig, Robin


logger = logging.getLogger("simulator.limit")

MIN_LAYER_CELLS = 3
PRODUCT_RTOL = 1e-12

CONVERGENCE_COLUMNS = [
    'level', 'L_nominal', 'L_actual', 'lambda', 'lambda_L', 'n_cells',
    'resolved', 'tv_distance', 'ks_distance', 'detected_mass_error', 'tv_decreasing',
]

OuterWall = Union[Neumann, Robin]


@dataclass(frozen=True)
class LayerSpec:
    """A step-profile soft detector of thickness L closed by a reflecting wall."""
    L: float
    lambda_layer: float
    outer_bc: OuterWall = field(default_factory=Neumann)

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"layer thickness must be positive, got {self.L}")
        if self.lambda_layer < 0:
            raise ValueError(f"layer rate must be nonnegative, got {self.lambda_layer}")
        if not isinstance(self.outer_bc, (Neumann, Robin)):
            raise ValueError(f"outer wall must be Neumann or Robin, got {self.outer_bc!r}")

    @property
    def strength(self) -> float:
        """lambda L, the quantity held fixed along a limit sequence."""
        return self.lambda_layer * self.L


@dataclass(frozen=True)
class LimitSequence:
    kappa_target: float
    entries: Tuple[LayerSpec, ...]
    consts: PhysicalConstants = field(default_factory=PhysicalConstants)

    def __post_init__(self):
        if not self.kappa_target > 0:
            raise ValueError(f"kappa_target must be positive, got {self.kappa_target}")
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("a limit sequence needs at least one entry")
        target = self.target_strength
        for n, spec in enumerate(entries):
            if abs(spec.strength - target) > PRODUCT_RTOL * target:
                raise ValueError(
                    f"entry {n}: lambda L = {spec.strength!r} differs from hbar kappa / m = {target!r}"
                )
        if any(b.L >= a.L for a, b in zip(entries, entries[1:])):
            raise ValueError("layer thicknesses must be strictly decreasing")
        object.__setattr__(self, 'entries', entries)

    @property
    def target_strength(self) -> float:
        return self.consts.hbar * self.kappa_target / self.consts.mass


def matched_spec(L: float, kappa: float, consts: PhysicalConstants = PhysicalConstants(),
                 outer_bc: Optional[OuterWall] = None) -> LayerSpec:
    """Layer of thickness L whose rate satisfies lambda L = hbar kappa / m."""
    return LayerSpec(L=L, lambda_layer=consts.hbar * kappa / (consts.mass * L),
                     outer_bc=outer_bc if outer_bc is not None else Neumann())


def limit_sequence(kappa: float, L0: float, levels: int = 6,
                   consts: PhysicalConstants = PhysicalConstants(),
                   outer_bc: Optional[OuterWall] = None) -> LimitSequence:
    """L_n = L0 / 2^n for n < levels, each with its kappa-matched rate."""
    if levels < 1:
        raise ValueError(f"levels must be at least 1, got {levels}")
    entries = tuple(matched_spec(L0 / 2 ** n, kappa, consts, outer_bc) for n in range(levels))
    return LimitSequence(kappa_target=kappa, entries=entries, consts=consts)


def snap_cells(L: float, dx: float) -> int:
    """Number of grid cells nearest to L; ResolutionError below MIN_LAYER_CELLS."""
    if L < MIN_LAYER_CELLS * dx * (1 - 1e-9):
        raise ResolutionError(
            f"layer of thickness {L:g} is thinner than {MIN_LAYER_CELLS} cells of {dx:g}"
        )
    return max(int(round(L / dx)), MIN_LAYER_CELLS)


@dataclass(frozen=True)
class LayerProfile:
    profile: DetectorProfile
    L_actual: float
    start_index: int


def layer_profile(grid: SpatialGrid, spec: LayerSpec,
                  base: Optional[DetectorProfile] = None) -> LayerProfile:
    """
    Put the layer rate on [x_max - L_actual, x_max].

    L is snapped to a whole number of cells. The interface node carries half
    the layer rate, so the trapezoid integral of lambda is lambda L_actual.
    A layer starting at the first node covers the grid uniformly.
    """
    n_cells = snap_cells(spec.L, grid.dx)
    if n_cells > grid.n_points - 1:
        raise ValueError(f"layer of thickness {spec.L:g} does not fit a grid of length {grid.length:g}")
    if base is None:
        base = DetectorProfile.free(grid)
    elif base.V.shape != (grid.n_points,):
        raise ValueError("base profile is not sampled on this grid")

    start = grid.n_points - 1 - n_cells
    lam = np.zeros(grid.n_points)
    lam[start + 1:] = spec.lambda_layer
    lam[start] = spec.lambda_layer if start == 0 else 0.5 * spec.lambda_layer
    L_actual = n_cells * grid.dx
    logger.debug(f"layer of {n_cells} cells (L={L_actual:g}) from node {start}, rate {spec.lambda_layer:g}")
    return LayerProfile(profile=base.with_rate(base.lam + lam), L_actual=L_actual, start_index=start)


def soft_detection_distribution(
    psi0: WaveFunction,
    grid: SpatialGrid,
    spec: LayerSpec,
    config: PropagatorConfig,
    n_bins: int = DEFAULT_BINS,
    eps_tol: float = 1e-8,
    base: Optional[DetectorProfile] = None,
) -> DetectionDistribution:
    """
    Detection statistics of a soft layer placed just beyond x_max.

    The grid, state and profile are extended to the right by the layer;
    the outer wall closes the extended grid. Every absorption in the layer
    is booked as a detection on the right side.
    """
    if psi0.grid != grid:
        raise ValueError("psi0 does not live on the given grid")
    n_cells = snap_cells(spec.L, grid.dx)
    extended = grid.extended_right(n_cells)
    base = base if base is not None else DetectorProfile.free(grid)
    layered = layer_profile(extended, spec, base.padded_right(n_cells))
    wall_config = config.with_boundaries(bc_right=spec.outer_bc)
    dist = detection_distribution(
        psi0.padded_right(n_cells), layered.profile, wall_config,
        n_bins=n_bins, eps_tol=eps_tol, absorption_side='right',
    )
    logger.info(
        f"soft layer L={layered.L_actual:g} lambda={spec.lambda_layer:g}: "
        f"detected={dist.detected_mass:.6f}, p_never={dist.p_never:.6f}"
    )
    return dist


def abr_reference(psi0: WaveFunction, grid: SpatialGrid, kappa: float, config: PropagatorConfig,
                  n_bins: int = DEFAULT_BINS, eps_tol: float = 1e-8,
                  base: Optional[DetectorProfile] = None) -> DetectionDistribution:
    """The absorbing-boundary run a limit sequence converges to: Absorbing(kappa) at x_max."""
    abr_config = config.with_boundaries(bc_right=Absorbing(kappa))
    return abr_distribution(psi0, grid, base if base is not None else DetectorProfile.free(grid),
                            abr_config, n_bins=n_bins, eps_tol=eps_tol)


def _study_row(level, spec, psi0, grid, seq, config, n_bins, eps_tol, base, reference) -> dict:
    row = {'level': level, 'L_nominal': spec.L}
    try:
        n_cells = snap_cells(spec.L, grid.dx)
    except ResolutionError as e:
        logger.warning(f"level {level} skipped: {e}")
        row.update(L_actual=np.nan, n_cells=0, resolved=False, tv_distance=np.nan,
                   ks_distance=np.nan, detected_mass_error=np.nan,
                   **{'lambda': spec.lambda_layer, 'lambda_L': spec.strength})
        return row

    L_actual = n_cells * grid.dx
    adjusted = replace(spec, L=L_actual, lambda_layer=seq.target_strength / L_actual)
    dist = soft_detection_distribution(psi0, grid, adjusted, config, n_bins, eps_tol, base)
    row.update(
        L_actual=L_actual,
        n_cells=n_cells,
        resolved=True,
        tv_distance=total_variation(dist.total_by_bin, reference.total_by_bin),
        ks_distance=kolmogorov_distance(dist.total_by_bin, reference.total_by_bin),
        detected_mass_error=abs(dist.detected_mass - reference.detected_mass),
        **{'lambda': adjusted.lambda_layer, 'lambda_L': adjusted.strength},
    )
    return row


def convergence_study(
    psi0: WaveFunction,
    grid: SpatialGrid,
    seq: LimitSequence,
    config: PropagatorConfig,
    n_bins: int = DEFAULT_BINS,
    eps_tol: float = 1e-8,
    workers: int = 1,
    base: Optional[DetectorProfile] = None,
    reference: Optional[DetectionDistribution] = None,
) -> pd.DataFrame:
    """
    Compare each layer of `seq` with the absorbing boundary rule.

    The reference run closes the same grid with Absorbing(kappa_target) on
    the right. Each resolvable entry is snapped to whole cells and its rate
    readjusted to keep lambda L fixed. Entries thinner than three cells stay
    in the table with resolved=False and NaN distances.

    Returns one row per entry with the columns in CONVERGENCE_COLUMNS;
    tv_decreasing compares each resolved row with the previous resolved one.
    """
    if reference is None:
        reference = abr_reference(psi0, grid, seq.kappa_target, config, n_bins, eps_tol, base)

    def run(item):
        level, spec = item
        return _study_row(level, spec, psi0, grid, seq, config, n_bins, eps_tol, base, reference)

    items = list(enumerate(seq.entries))
    if workers <= 1:
        rows = [run(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, items))

    previous = None
    for row in rows:
        if not row['resolved']:
            row['tv_decreasing'] = None
            continue
        row['tv_decreasing'] = True if previous is None else bool(row['tv_distance'] < previous)
        if previous is not None and not row['tv_decreasing']:
            logger.warning(
                f"TV distance did not decrease at level {row['level']}: "
                f"{row['tv_distance']:.3e} >= {previous:.3e}"
            )
        previous = row['tv_distance']

    table = pd.DataFrame(rows, columns=CONVERGENCE_COLUMNS)
    logger.info(f"convergence study: {int(table['resolved'].sum())}/{len(table)} levels resolved")
    return table


def summarize_convergence(table: pd.DataFrame, tv_target: float = 0.05) -> dict:
    """Headline numbers of a convergence table."""
    resolved = table[table['resolved'].astype(bool)]
    if resolved.empty:
        return {'levels_resolved': 0, 'final_tv': None, 'final_ks': None,
                'final_detected_mass_error': None, 'monotone': False, 'within_target': False}
    final_tv = float(resolved['tv_distance'].iloc[-1])
    return {
        'levels_resolved': int(len(resolved)),
        'final_tv': final_tv,
        'final_ks': float(resolved['ks_distance'].iloc[-1]),
        'final_detected_mass_error': float(resolved['detected_mass_error'].iloc[-1]),
        'monotone': bool(resolved['tv_decreasing'].astype(bool).all()),
        'within_target': final_tv < tv_target,
    }


def refinement_change(coarse: pd.DataFrame, fine: pd.DataFrame) -> List[float]:
    """Relative change of each level's TV distance between two grid resolutions."""
    merged = coarse.merge(fine, on='level', suffixes=('_coarse', '_fine'))
    merged = merged[merged['resolved_coarse'].astype(bool) & merged['resolved_fine'].astype(bool)]
    return [abs(f - c) / c for c, f in zip(merged['tv_distance_coarse'], merged['tv_distance_fine'])]
