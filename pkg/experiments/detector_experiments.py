"""One experiment class per detector model."""

from typing import Dict, List, Optional, Type

import numpy as np
import pandas as pd

from experiments.base_experiment import BaseExperiment, ExperimentResult
from experiments.config import ExperimentConfig
from models.domain import Detected, DetectionOutcome, NeverDetected, SpatialGrid
from simulators.abr_detection import abr_distribution, mean_detection_time, packet_detection_oracle, time_bins
from simulators.detector_limit import (
    LayerSpec,
    abr_reference,
    convergence_study,
    limit_sequence,
    snap_cells,
    soft_detection_distribution,
    summarize_convergence,
)
from simulators.grw_process import (
    GrwOptions,
    first_detection_ensemble,
    grw_ensemble,
    outcomes_distribution,
    trace_semigroup,
)
from simulators.propagator import Absorbing


OUTCOME_COLUMNS = ['T', 'X', 'side']


def outcomes_frame(outcomes: List[DetectionOutcome]) -> pd.DataFrame:
    """(T, X, side) per trajectory; undetected ones are (inf, NaN, 'never')."""
    rows = [
        (o.time, o.position, o.side) if isinstance(o, Detected) else (np.inf, np.nan, 'never')
        for o in outcomes
    ]
    return pd.DataFrame(rows, columns=OUTCOME_COLUMNS)


def _mean_or_none(dist) -> Optional[float]:
    return mean_detection_time(dist) if dist.detected_mass > 0 else None


class AbrExperiment(BaseExperiment):
    """Absorbing boundary rule on one or both walls."""

    def first_pass_oracle(self):
        """Stationary-scattering absorption probability for a free packet heading into an absorbing wall."""
        cfg = self.config
        if cfg.initial_state_file or cfg.barrier_height or not cfg.packet_momentum:
            return None
        bc = self.boundary('right' if cfg.packet_momentum > 0 else 'left')
        if not isinstance(bc, Absorbing):
            return None
        return packet_detection_oracle(abs(cfg.packet_momentum), cfg.packet_width, bc.kappa, bc.shift)

    def run(self) -> ExperimentResult:
        grid = self.build_grid()
        psi0 = self.build_initial_state(grid)
        profile = self.build_profile(grid)
        config = self.build_propagator_config()
        self.logger.info(f"ABR run on {grid.n_points} nodes, {config.n_steps} steps")

        dist = abr_distribution(psi0, grid, profile, config, self.config.n_bins, self.config.eps_tol)
        summary = self.summary(
            dist.detected_mass, dist.p_never, dist.truncation_remainder, _mean_or_none(dist),
            detected_left=dist.side_mass('left'),
            detected_right=dist.side_mass('right'),
            tail_flux=dist.tail_flux,
            first_pass_oracle=self.first_pass_oracle(),
        )
        return ExperimentResult(summary=summary, distribution=dist)


class SoftExperiment(BaseExperiment):
    """Imaginary-potential layer beyond x_max, closed by a reflecting wall."""

    def run(self) -> ExperimentResult:
        cfg = self.config
        grid = self.build_grid()
        psi0 = self.build_initial_state(grid)
        profile = self.build_profile(grid)
        spec = LayerSpec(L=cfg.layer_length, lambda_layer=cfg.layer_rate, outer_bc=self.outer_wall())
        L_actual = snap_cells(spec.L, grid.dx) * grid.dx

        dist = soft_detection_distribution(psi0, grid, spec, self.build_propagator_config(),
                                           cfg.n_bins, cfg.eps_tol, base=profile)
        summary = self.summary(
            dist.detected_mass, dist.p_never, dist.truncation_remainder, _mean_or_none(dist),
            L_actual=L_actual,
            lambda_L=spec.lambda_layer * L_actual,
            equivalent_kappa=cfg.mass * spec.lambda_layer * L_actual / cfg.hbar,
            tail_flux=dist.tail_flux,
        )
        return ExperimentResult(summary=summary, distribution=dist)


class GrwConstantExperiment(BaseExperiment):
    """Constant-rate collapse process: Poisson event times, unitary flow in between."""

    def run(self) -> ExperimentResult:
        cfg = self.config
        grid = self.build_grid()
        psi0 = self.build_initial_state(grid)
        profile = self.build_profile(grid)
        options = GrwOptions(mode='constant', jump_mode=cfg.jump_mode)
        records = grw_ensemble(psi0, profile, self.build_propagator_config(), cfg.ensemble_size,
                               cfg.base_seed, options, cfg.workers, cfg.eps_tol)

        rows = [
            (i, record.seed, event.time, event.center, 'bulk')
            for i, record in enumerate(records)
            for event in record.events
        ]
        events = pd.DataFrame(rows, columns=['run', 'seed'] + OUTCOME_COLUMNS)
        first = [
            Detected(time=r.events[0].time, position=r.events[0].center) if r.events else NeverDetected()
            for r in records
        ]
        dist = outcomes_distribution(first, time_bins(cfg.t_max, cfg.n_bins))
        counts = np.array([r.n_events for r in records])
        # the smeared density integrates to the pre-collapse norm away from the walls
        gap = max((abs(e.center_mass - e.pre_norm) for r in records for e in r.events), default=0.0)
        if gap > cfg.eps_tol:
            self.logger.warning(f"collapse density lost up to {gap:.3e} of the norm at the walls; widen the grid")
        self.logger.info(
            f"{len(records)} trajectories, mean collapses {counts.mean():.4f} "
            f"(expected {cfg.lambda0 * cfg.t_max:.4f})"
        )
        summary = self.summary(
            dist.detected_mass, dist.p_never, 0.0, _mean_or_none(dist),
            ensemble_size=len(records),
            mean_collapses=float(counts.mean()),
            var_collapses=float(counts.var()),
            expected_collapses=cfg.lambda0 * cfg.t_max,
            max_center_mass_gap=gap,
        )
        return ExperimentResult(summary=summary, distribution=dist, outcomes=events)


class GrwFirstDetectionExperiment(BaseExperiment):
    """First collapse of the position-dependent process, sampled from one semigroup path."""

    def rate_profile(self, grid: SpatialGrid) -> np.ndarray:
        cfg = self.config
        left = cfg.x_min if cfg.rate_left is None else cfg.rate_left
        right = cfg.x_max if cfg.rate_right is None else cfg.rate_right
        return np.where((grid.x >= left) & (grid.x <= right), cfg.rate_value, 0.0)

    def run(self) -> ExperimentResult:
        cfg = self.config
        grid = self.build_grid()
        psi0 = self.build_initial_state(grid)
        profile = self.build_profile(grid, lam=self.rate_profile(grid))
        config = self.build_propagator_config()
        options = GrwOptions(mode='position', jump_mode=cfg.jump_mode,
                             smeared_absorption=cfg.smeared_absorption)

        path = trace_semigroup(psi0, profile, config, options, eps_tol=cfg.eps_tol)
        outcomes = first_detection_ensemble(psi0, profile, config, cfg.ensemble_size, cfg.base_seed,
                                            options, cfg.workers, path=path, eps_tol=cfg.eps_tol)
        dist = outcomes_distribution(outcomes, time_bins(cfg.t_max, cfg.n_bins))
        times = [o.time for o in outcomes if isinstance(o, Detected)]
        summary = self.summary(
            dist.detected_mass, dist.p_never, 0.0, float(np.mean(times)) if times else None,
            ensemble_size=len(outcomes),
            survival_t_max=float(path.survival[-1]),
        )
        return ExperimentResult(summary=summary, distribution=dist, outcomes=outcomes_frame(outcomes))


class LimitStudyExperiment(BaseExperiment):
    """Soft layers of shrinking thickness compared with the absorbing boundary rule."""

    def run(self) -> ExperimentResult:
        cfg = self.config
        grid = self.build_grid()
        psi0 = self.build_initial_state(grid)
        profile = self.build_profile(grid)
        config = self.build_propagator_config()
        seq = limit_sequence(cfg.layer_kappa, cfg.layer_length, cfg.layer_levels,
                             self.consts, self.outer_wall())

        reference = abr_reference(psi0, grid, cfg.layer_kappa, config, cfg.n_bins, cfg.eps_tol,
                                  base=profile)
        table = convergence_study(psi0, grid, seq, config, cfg.n_bins, cfg.eps_tol, cfg.workers,
                                  base=profile, reference=reference)
        headline = summarize_convergence(table, cfg.tv_target)
        if not headline['within_target']:
            self.logger.warning(
                f"finest resolved level misses the TV target {cfg.tv_target}: {headline['final_tv']}"
            )
        summary = self.summary(
            reference.detected_mass, reference.p_never, reference.truncation_remainder,
            _mean_or_none(reference),
            kappa=cfg.layer_kappa,
            tv_target=cfg.tv_target,
            **headline,
        )
        return ExperimentResult(summary=summary, distribution=reference, convergence=table)


EXPERIMENTS: Dict[str, Type[BaseExperiment]] = {
    'abr': AbrExperiment,
    'soft': SoftExperiment,
    'grw_constant': GrwConstantExperiment,
    'grw_first_detection': GrwFirstDetectionExperiment,
    'limit_study': LimitStudyExperiment,
}


def create_experiment(config: ExperimentConfig) -> BaseExperiment:
    return EXPERIMENTS[config.model](config)
