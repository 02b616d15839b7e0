import numpy as np
import pytest

from spadrng.config import linospad, randy
from spadrng.pipeline import run_linospad, run_randy


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def randy_run():
    """The full single-detector preset (10 s), shared by the end-to-end tests."""
    return run_randy(randy())


@pytest.fixture(scope="session")
def linospad_run():
    """The array preset at 800 frames."""
    from dataclasses import replace

    cfg = linospad()
    cfg = replace(cfg, sim=replace(cfg.sim, duration=800 * cfg.array.frame_time))
    return run_linospad(cfg)
