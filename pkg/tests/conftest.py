import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def fourleg():
    from crossguard.fixtures import fourleg_basic
    return fourleg_basic()


@pytest.fixture(scope="session")
def tempe_map():
    from crossguard.fixtures import tempe
    return tempe()


@pytest.fixture(scope="session")
def right_ego(fourleg):
    from crossguard.fixtures import RIGHT_FROM_SOUTH
    return fourleg.guideway(RIGHT_FROM_SOUTH)


@pytest.fixture(scope="session")
def cz(fourleg, right_ego):
    """CZ label -> conflict zone for the right turn from the south."""
    return dict(fourleg.labelled_zones(right_ego))


@pytest.fixture(scope="session")
def library_runs():
    """(trace, metrics) for every library scenario in both variants, run once per session."""
    from crossguard.scenarios import scenario_library
    from crossguard.sim import run
    return {key: run(sc) for key, sc in scenario_library().items()}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
