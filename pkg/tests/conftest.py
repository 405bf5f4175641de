"""Shared fixtures and the per-criterion acceptance summary."""

from __future__ import annotations

import random
from collections import OrderedDict

import pytest

from hfipay.harness.world import build_world

_criteria: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(session, config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _criteria.setdefault(number, {"title": title, "outcomes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number = mark.args[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _criteria[number]["outcomes"].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        outcomes = entry["outcomes"]
        if not outcomes:
            verdict = "SKIP"
        else:
            verdict = "PASS" if all(outcomes) else "FAIL"
        terminalreporter.write_line(f"{verdict} AC{number}: {entry['title']} ({sum(outcomes)}/{len(outcomes)} tests)")


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def world():
    w = build_world(seed=11, mode="verified")
    w.add_sender("alice", {"USDC": 10_000, "DAI": 500})
    w.add_recipient("bob@example.com")
    return w


@pytest.fixture
def baseline_world():
    w = build_world(seed=12, mode="baseline")
    w.add_sender("alice", {"USDC": 10_000})
    w.add_recipient("bob@example.com")
    return w
