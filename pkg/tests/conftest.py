import os

import pytest
from hypothesis import HealthCheck, settings

from convopt.mesh import RectDomain, build_grid

settings.register_profile(
    "ci", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

UNIT = RectDomain(0.0, 1.0, 0.0, 1.0)


@pytest.fixture
def unit():
    return UNIT


@pytest.fixture
def grid8():
    return build_grid(UNIT, 8, 8)


def pytest_terminal_summary(terminalreporter):
    from _util import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
