import numpy as np
import pytest
from hypothesis import settings

from helpers import ACCEPTANCE_LINES
from modseg.backend.scenes import make_scene

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_scene():
    """256x256 three-band scene on an 8x8 feature grid."""
    return make_scene(7, n_labels=3, size=(256, 256), layout="bands")


@pytest.fixture(scope="session")
def small_backend(small_scene):
    return small_scene.backend()


@pytest.fixture(scope="session")
def small_traj(small_scene, small_backend):
    return small_backend.invert(small_scene.render())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
