import sys

import numpy as np
import pytest
from hypothesis import settings

from spinevol.phantom import PhantomScene, default_calibration, make_scan

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# 0.2 mm pixels, same field of view as the 559x699 @ 0.1 mm default
SMALL_CALIB = default_calibration(shape=(350, 280), scale=(0.2, 0.2))


@pytest.fixture(scope="session")
def small_calib():
    return SMALL_CALIB


@pytest.fixture(scope="session")
def ramp_scan():
    """300-frame straight ramp phantom (35 -> 45 mm), mild tilt."""
    return make_scan(PhantomScene(), frame_count=300, tilt_jitter_deg=5.0, rng=3, calib=SMALL_CALIB)


@pytest.fixture(scope="session")
def tiny_scan():
    """60 frames, coarse pixels: cheap enough for per-test reconstructions."""
    calib = default_calibration(shape=(140, 112), scale=(0.5, 0.5))
    return make_scan(PhantomScene(), frame_count=60, tilt_jitter_deg=4.0, rng=5, calib=calib)


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.fixture(scope="session")
def curved_scan():
    """20 degree scoliotic phantom, enough frames for a clean coronal map."""
    from spinevol.phantom import scoliotic_scene
    return make_scan(scoliotic_scene(20.0, 0.6), frame_count=600, tilt_jitter_deg=0.0, rng=8, calib=SMALL_CALIB)


@pytest.fixture(scope="session")
def curved_alg2(curved_scan):
    from spinevol.pipeline import reconstruct_scan
    from spinevol.project import coronal_projection
    from spinevol.segment import alg2_profile
    prof = alg2_profile(curved_scan.frames, curved_scan.calib)
    grid, _ = reconstruct_scan(curved_scan.frames, curved_scan.frame_poses(), curved_scan.calib, prof)
    return grid, coronal_projection(grid)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
