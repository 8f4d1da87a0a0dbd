import pytest
from hypothesis import HealthCheck, settings

from haptic_manip import datagen, handsim

settings.register_profile(
    "default", deadline=None, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

STAMP = "2000-01-01T00:00:00+00:00"

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record an acceptance verdict: criterion(number, passed, detail)."""

    def record(number, passed, detail=""):
        _CRITERIA[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_data():
    """A few short disk episodes: enough for shape/plumbing tests."""
    return datagen.collect(handsim.HandConfig(), handsim.OBJECTS["circ15"], n_episodes=8, max_steps=120,
                           seed=3, timestamp=STAMP)
