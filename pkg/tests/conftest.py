import os

import pytest
from hypothesis import HealthCheck, settings

from laacoex.core import SystemConfig

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


DESK = dict(cw_min=4, m=1, n_sf=4, sf_slot=5, rsf=1, t_wifi=3.0)


@pytest.fixture
def desk_config() -> SystemConfig:
    return SystemConfig(**DESK)


@pytest.fixture
def tiny_config() -> SystemConfig:
    return SystemConfig(cw_min=2, m=0, n_sf=2, sf_slot=2, rsf=1, t_wifi=2.0)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
