import os

import pytest
from hypothesis import HealthCheck, settings

from structmap.fixtures import ATOM_IDS, SOLAR_IDS, load

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def atom():
    return load("atom")


@pytest.fixture(scope="session")
def solar():
    return load("solar")


def A(k: int) -> int:
    """Atom statement number -> node id."""
    return ATOM_IDS[k]


def S(k: int) -> int:
    """Solar statement number -> node id."""
    return SOLAR_IDS[k]


# the full atom -> solar mapping by statement numbers
FULL = [(1, 8), (2, 9), (3, 10), (4, 11), (5, 17), (6, 14), (7, 15)]


def pairs(*numbered):
    return frozenset((A(a), S(s)) for a, s in numbered)


# one line per acceptance criterion, printed after the run regardless of capture
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"{criterion} {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {'PASS' if passed else 'FAIL'}  {detail}")
