from __future__ import annotations

import numpy as np
import pytest

from entwp.config import RunConfig
from entwp.pipeline import build_pair, propagate_model


@pytest.fixture(scope="session")
def default_cfg() -> RunConfig:
    return RunConfig()


@pytest.fixture(scope="session")
def model_traj(default_cfg):
    """Default model pair propagated to 100 fs."""
    return propagate_model(default_cfg, 100.0)


@pytest.fixture(scope="session")
def model_pair(default_cfg):
    return build_pair(default_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = [v for reps in terminalreporter.stats.values() for r in reps
             for k, v in getattr(r, "user_properties", ()) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines), key=lambda s: int(s.split("]")[1].split()[0])):
            terminalreporter.write_line(line)
