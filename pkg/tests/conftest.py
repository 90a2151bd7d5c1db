"""Session fixtures: cached equilibrium ensembles, acceptance reporting."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

import acceptance_report
from ensembles import build_ensemble


def pytest_terminal_summary(terminalreporter):
    if acceptance_report.lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in acceptance_report.lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ensemble8():
    return build_ensemble(8)


@pytest.fixture(scope="session")
def ensemble16():
    return build_ensemble(16)


@pytest.fixture(scope="session")
def ensemble32():
    return build_ensemble(32)


@pytest.fixture(scope="session")
def ensemble64():
    return build_ensemble(64)
