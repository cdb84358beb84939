import json

import pytest

from glab.models import TimePartition, VolatilityBand
from glab.schemas import GridConfig
from glab.services.scenarios import default_family, simulate_family


@pytest.fixture
def band():
    return VolatilityBand(sigma_lo=0.5, sigma_hi=1.0)


@pytest.fixture
def partition():
    return TimePartition.uniform(1.0, 2)


@pytest.fixture
def grid_config():
    """61 nodes on [-6, 6]: dx = 0.2, about 63 PDE steps per unit of time."""
    return GridConfig(nodes=61, param_nodes=11, store_steps=None)


@pytest.fixture
def family(band):
    return default_family(band, 1.0, 1 / 64, 16, seed=11, n_bang_bang=2, n_random=2)


@pytest.fixture
def bundles(family):
    return simulate_family(family)


@pytest.fixture
def tiny_config():
    """A constant driver with zero terminal: fast, with closed forms for every quantity."""
    return {
        "seed": 3,
        "band": {"sigma_lo": 0.5, "sigma_hi": 1.0},
        "horizon": 1.0,
        "partition": {"uniform": 2},
        "grid": {"nodes": 41, "param_nodes": 11, "store_steps": 40},
        "generator": {"preset": "constant", "params": {"c": 0.3}},
        "terminal": {"preset": "zero"},
        "scenarios": {"dt": 0.015625, "paths_per_control": 24, "n_bang_bang": 2, "n_random": 1},
    }


@pytest.fixture
def config_file(tmp_path, tiny_config):
    def write(data=None, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(tiny_config if data is None else data), encoding="utf-8")
        return path

    return write
