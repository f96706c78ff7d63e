import warnings

import pytest

from obshom.media import MediumConfig

TWO_PI = 6.283185307179586
FOUR_PI = 12.566370614359172


@pytest.fixture
def const2():
    return MediumConfig(2, {"kind": "constant", "gamma": TWO_PI}, gamma_bar=TWO_PI)


@pytest.fixture
def const3():
    return MediumConfig(3, {"kind": "constant", "gamma": FOUR_PI}, gamma_bar=FOUR_PI)


@pytest.fixture
def empty2():
    return MediumConfig(2, {"kind": "constant", "gamma": 0.0}, gamma_bar=1.0)


@pytest.fixture(autouse=True)
def _numpy_warnings_are_errors():
    with warnings.catch_warnings():
        warnings.filterwarnings("error", category=RuntimeWarning, module="numpy")
        yield


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
