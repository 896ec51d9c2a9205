import numpy as np
import pytest

from rigidflow.synth import SynthConfig, compute_gt_maps, generate_scene_pair
from _helpers import ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scene3():
    return generate_scene_pair(SynthConfig(), 3)


@pytest.fixture(scope="session")
def gt3(scene3):
    return compute_gt_maps(scene3)
