import pytest

from glucocontract.model import get_patient
from glucocontract.scenarios import default_gains

SUBJECTS = ("1", "3", "5")


@pytest.fixture(scope="session")
def patients():
    return {s: get_patient(s) for s in SUBJECTS}


@pytest.fixture(scope="session")
def gains():
    """Synthesized once per session (the search takes a few seconds per subject)."""
    return {s: default_gains(s) for s in SUBJECTS}


# criterion name -> True while every parametrized case has passed
_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1].split("[")[0]
    if report.when == "call" or report.failed:
        _acceptance[name] = _acceptance.get(name, True) and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in _acceptance.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name.removeprefix('test_')}")
