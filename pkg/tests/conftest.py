import numpy as np
import pytest

from cimsim.mapper import PrecisionConfig
from cimsim.netexec.fixture import make_fixture
from cimsim.netexec.graph import calibrate_model


def _calibrated_fixture():
    fx = make_fixture(seed=0)
    calib = fx.train.x[:512]
    calibrate_model(fx.model, [calib[:256], calib[256:]], PrecisionConfig())
    return fx, [calib[:256], calib[256:]]


@pytest.fixture(scope="session")
def mlp():
    """Calibrated blob MLP (8b/8b), its eval split and calibration batches."""
    return _calibrated_fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
