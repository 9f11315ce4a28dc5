"""Base class for detector experiments."""

import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from experiments.config import ExperimentConfig
from models.domain import (
    DetectionDistribution,
    DetectorProfile,
    PhysicalConstants,
    RunSummary,
    SpatialGrid,
    WaveFunction,
)
from models.observables import gaussian_packet, normalized, squared_norm
from simulators.propagator import (
    Absorbing,
    BoundaryCondition,
    Dirichlet,
    Neumann,
    PropagatorConfig,
    Robin,
)

load_dotenv()

# Configure logging
logging.basicConfig(
    level=os.getenv('LOG_LEVEL', 'INFO'),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)


@dataclass
class ExperimentResult:
    """Everything a run writes besides its manifest."""
    summary: RunSummary
    distribution: Optional[DetectionDistribution] = None
    outcomes: Optional[pd.DataFrame] = None
    convergence: Optional[pd.DataFrame] = None


class BaseExperiment(ABC):
    """Builds the numerical objects of one experiment from its config."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.logger = logging.getLogger(f"experiment.{config.model}")

    @property
    def consts(self) -> PhysicalConstants:
        return PhysicalConstants(hbar=self.config.hbar, mass=self.config.mass)

    def build_grid(self) -> SpatialGrid:
        return SpatialGrid(self.config.x_min, self.config.x_max, self.config.n_points)

    @property
    def layered(self) -> bool:
        """The soft layer's outer wall closes the right end instead of bc_right."""
        return self.config.model in ('soft', 'limit_study')

    def boundary(self, side: str) -> BoundaryCondition:
        if side == 'right' and self.layered:
            return self.outer_wall()
        kind = getattr(self.config, f'bc_{side}')
        if kind == 'dirichlet':
            return Dirichlet()
        if kind == 'neumann':
            return Neumann()
        if kind == 'robin':
            return Robin(getattr(self.config, f'robin_alpha_{side}'))
        # d(psi)/dr = i kappa psi at r = R reads du/dr = (i kappa + 1/R) u
        shift = 1.0 / self.config.x_max if self.config.geometry == 'radial' else 0.0
        return Absorbing(getattr(self.config, f'kappa_{side}'), shift=shift)

    def outer_wall(self):
        if self.config.outer_bc == 'robin':
            return Robin(self.config.outer_alpha)
        return Neumann()

    def build_initial_state(self, grid: SpatialGrid) -> WaveFunction:
        """
        Gaussian packet or node values from initial_state_file.

        Dirichlet nodes are pinned to zero before normalizing.
        """
        cfg = self.config
        if cfg.initial_state_file:
            table = np.loadtxt(Path(cfg.initial_state_file), ndmin=2)
            if table.shape != (grid.n_points, 2):
                raise ValueError(
                    f"{cfg.initial_state_file}: expected {grid.n_points} rows of (real, imag), "
                    f"got shape {table.shape}"
                )
            psi = WaveFunction(grid, table[:, 0] + 1j * table[:, 1])
        else:
            psi = gaussian_packet(grid, cfg.packet_center, cfg.packet_width, cfg.packet_momentum)

        values = psi.values.copy()
        if isinstance(self.boundary('left'), Dirichlet):
            values[0] = 0.0
        if isinstance(self.boundary('right'), Dirichlet):
            values[-1] = 0.0
        psi = psi.with_values(values)
        norm2 = squared_norm(psi)
        if abs(norm2 - 1.0) > cfg.eps_tol:
            self.logger.info(f"initial state renormalized (||psi0||^2 was {norm2:.10f})")
            psi = normalized(psi)
        return psi

    def build_profile(self, grid: SpatialGrid, lam: Optional[np.ndarray] = None) -> DetectorProfile:
        """Potential barrier, rates, sigma and boundary wavenumbers."""
        cfg = self.config
        V = np.zeros(grid.n_points)
        if cfg.barrier_height:
            inside = (grid.x >= cfg.barrier_left) & (grid.x <= cfg.barrier_right)
            V[inside] = cfg.barrier_height
        return DetectorProfile(
            V=V,
            lam=lam if lam is not None else np.zeros(grid.n_points),
            sigma=cfg.sigma if cfg.sigma is not None else 5 * grid.dx,
            kappa_left=self._kappa('left'),
            kappa_right=self._kappa('right'),
            lambda0=cfg.lambda0,
        )

    def _kappa(self, side: str) -> Optional[float]:
        bc = self.boundary(side)
        return bc.kappa if isinstance(bc, Absorbing) else None

    def build_propagator_config(self) -> PropagatorConfig:
        return PropagatorConfig(
            dt=self.config.dt,
            t_max=self.config.t_max,
            bc_left=self.boundary('left'),
            bc_right=self.boundary('right'),
            consts=self.consts,
        )

    def summary(self, detected_mass: float, p_never: float, truncation_remainder: float,
                mean_detection_time: Optional[float], **extras) -> RunSummary:
        return RunSummary(
            model=self.config.model,
            detected_mass=float(detected_mass),
            p_never=float(p_never),
            truncation_remainder=float(truncation_remainder),
            mean_detection_time=None if mean_detection_time is None else float(mean_detection_time),
            extras=dict(extras, geometry=self.config.geometry),
        )

    @abstractmethod
    def run(self) -> ExperimentResult:
        """
        Run the experiment.
        Must be implemented by subclasses.

        Returns:
            ExperimentResult with the summary and whichever tables the model produces
        """
        pass
