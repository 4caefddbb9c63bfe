"""Pytest configuration and fixtures."""
import os

import numpy as np
import pytest

# Keep test runs off the real output directory and quiet
os.environ.setdefault("LOG_LEVEL", "WARNING")
os.environ.pop("GAZELAB_OUTPUT_DIR", None)
os.environ.pop("GAZELAB_WORKERS", None)

from config import PRESETS  # noqa: E402
from synth_oracle import EventScript, Fixation, Saccade, generate_recording, rotate_towards  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run Monte-Carlo acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte-Carlo acceptance run")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(12345)


@pytest.fixture
def classroom():
    return PRESETS["classroom"]


def direction(azimuth_deg: float, amplitude_deg: float):
    """Unit vector ``amplitude_deg`` away from straight ahead."""
    return tuple(rotate_towards(np.array([0.0, 0.0, 1.0]), np.radians(azimuth_deg), amplitude_deg))


@pytest.fixture
def three_event_recording():
    """Fixation 300 ms, 6 deg saccade over 50 ms, fixation 200 ms at 120 Hz, zero noise."""
    script = EventScript(
        segments=(
            Fixation(300.0, (0.0, 0.0, 1.0), aoi="teacher"),
            Saccade(50.0, direction(0.0, 6.0)),
            Fixation(200.0, aoi="screen"),
        ),
        sample_rate=120.0,
    )
    return generate_recording(script, seed=0)
