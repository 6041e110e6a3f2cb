import numpy as np
import pytest

from anchorcodec.scene import SyntheticSpec, gen_synthetic_scene
from anchorcodec.trainer import TrainConfig, fit


@pytest.fixture(scope="session")
def small_scene():
    return gen_synthetic_scene(SyntheticSpec(n_anchors=400, seed=11, visibility_radius=9.0))


@pytest.fixture(scope="session")
def small_model(small_scene):
    return fit(small_scene, TrainConfig(lambda_r=0.01, steps=12, seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance_report():
    """Record the one-line verdict of an acceptance criterion."""

    def record(number: int, passed: bool, detail: str, verdict: str | None = None):
        ACCEPTANCE_LINES[number] = f"criterion {number}: {verdict or ('PASS' if passed else 'FAIL')} - {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
