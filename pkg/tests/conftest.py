import numpy as np
import pytest

import scenario
from evdecomp.testbed import SCENE_KINDS

ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scene_data():
    """0.25 s clips and their simulated streams, one per scene kind."""
    return {kind: scenario.clip(kind) for kind in SCENE_KINDS}


@pytest.fixture(scope="session")
def e2e_runs(scene_data):
    """Decompression results for every clip, computed once per session."""
    return {kind: scenario.run(*scene_data[kind]) for kind in SCENE_KINDS}


@pytest.fixture
def acceptance():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
