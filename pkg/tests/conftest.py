from __future__ import annotations

import pytest

from polycarleson import harness

# desk-scale instance shapes shared across the tests
DEFAULT = harness.ExperimentConfig()
ROWS = harness.ExperimentConfig(D=4, s_min=0, s_max=4, resolution=1, preset="two-phase",
                                phase_radius=5000.0, C0=1.0, C_sep=0.5)
LOCALIZATION = harness.ExperimentConfig(D=4, s_min=0, s_max=4, resolution=2, set_fraction=1 / 64)
TREES = harness.ExperimentConfig(D=4, s_min=0, s_max=3, resolution=8)


@pytest.fixture(scope="session")
def default_pipe():
    return harness.build_pipeline(harness.generate_instance(DEFAULT, 0))


@pytest.fixture(scope="session")
def rows_pipe():
    return harness.build_pipeline(harness.generate_instance(ROWS, 0))


@pytest.fixture(scope="session")
def localization_pipe():
    return harness.build_pipeline(harness.generate_instance(LOCALIZATION, 1))
