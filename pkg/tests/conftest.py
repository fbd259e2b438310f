"""Shared fixtures and the per-criterion acceptance summary."""
from __future__ import annotations

from collections import defaultdict

import pytest

from popscale.instances import builtin
from popscale.operators import (
    elitist_proportional_selection,
    elitist_truncation_selection,
    replicate_best_selection,
)

_criteria: dict[int, dict] = defaultdict(lambda: {"title": "", "outcomes": []})


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            entry = _criteria[mark.args[0]]
            entry["title"] = mark.args[1] if len(mark.args) > 1 else entry["title"]


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = dict(report.user_properties).get("criterion")
    if number is not None:
        _criteria[number]["outcomes"].append(report.outcome)


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark:
        item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        outcomes = entry["outcomes"]
        if not outcomes:
            continue
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        passed = sum(o == "passed" for o in outcomes)
        terminalreporter.write_line(
            f"criterion {number}: {status} ({passed}/{len(outcomes)} tests) {entry['title']}")


@pytest.fixture(scope="session")
def table12():
    return builtin("paper-table12", eps=0.0)


@pytest.fixture(scope="session")
def table12_eps():
    return builtin("paper-table12", eps=0.01)


@pytest.fixture(scope="session")
def table34():
    return builtin("paper-table34", eps=0.0)


@pytest.fixture(scope="session")
def onemax4():
    return builtin("onemax-knapsack", n=4)


@pytest.fixture(scope="session")
def deceptive4():
    return builtin("deceptive-knapsack", n=4)


@pytest.fixture(params=["replicate_best", "elitist_proportional", "elitist_truncation"])
def any_rule(request):
    return {
        "replicate_best": replicate_best_selection,
        "elitist_proportional": elitist_proportional_selection,
        "elitist_truncation": elitist_truncation_selection,
    }[request.param]()
