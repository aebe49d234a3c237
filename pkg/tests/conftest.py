import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from smolux.dynamics import model_from_dict  # noqa: E402
from smolux.kernel_field import SpatialGrid  # noqa: E402
from smolux.mass_measure import make_power_law_base  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def power_base():
    return make_power_law_base(16, 2.0)


@pytest.fixture
def line_grid():
    return SpatialGrid(1, 2.0, 32)


@pytest.fixture
def radial_model():
    spec = {"sigma": {"family": "constant", "scale": 0.3},
            "drift": {"family": "radial", "eps": 1.0, "center": 1.0}, "eps_floor": 1.0}
    return model_from_dict(spec, 1)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
