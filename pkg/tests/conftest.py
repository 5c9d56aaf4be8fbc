from __future__ import annotations

from pathlib import Path

import pytest

from recomp.history import HistoryDB
from recomp.pipeline import Executor
from recomp.store import Registry

DATA = Path(__file__).parent / "data"

_acceptance: dict[str, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    criterion = dict(report.user_properties).get("acceptance")
    if criterion is None:
        return
    _acceptance.setdefault(criterion, []).append(report.outcome)


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            item.user_properties.append(("acceptance", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_acceptance, key=lambda c: (len(c.split()[0]), c)):
        outcomes = _acceptance[criterion]
        verdict = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{verdict}  {criterion}  ({len(outcomes)} check(s))")


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def mem():
    """An in-memory registry, history and executor."""
    registry = Registry()
    history = HistoryDB()
    return registry, history, Executor(history, registry)
