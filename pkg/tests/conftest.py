"""Shared fixtures."""

import numpy as np
import pytest

from models.domain import DetectorProfile, SpatialGrid, WaveFunction
from models.observables import gaussian_packet, normalized
from storage.results import ResultStore


@pytest.fixture
def box_grid():
    """[0, 40] with dx = 0.1."""
    return SpatialGrid(0.0, 40.0, 401)


@pytest.fixture
def matched_packet(box_grid):
    """Packet at x = 20 with k0 = 2, heading right."""
    return gaussian_packet(box_grid, center=20.0, width=2.0, momentum=2.0)


@pytest.fixture
def free_profile(box_grid):
    return DetectorProfile.free(box_grid)


@pytest.fixture
def mirror_packet(box_grid):
    """Real packet symmetric about the grid centre, half moving each way."""
    x = box_grid.x - 20.0
    values = np.exp(-x ** 2 / (4 * 2.0 ** 2)) * np.cos(2.0 * x)
    values = 0.5 * (values + values[::-1])
    return normalized(WaveFunction(box_grid, values))


@pytest.fixture
def store(tmp_path, monkeypatch):
    monkeypatch.delenv('ABR_OUTPUT_DIR', raising=False)
    return ResultStore(tmp_path / 'results')


@pytest.fixture
def write_config(tmp_path):
    def write(text, name='experiment.cfg'):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write
