from __future__ import annotations

import pytest

from copar.workload import parse_run_config


def make_cfg(n=4, R=(200,), **overrides):
    doc = {
        "nodes": [{"id": i} for i in range(1, n + 1)],
        "resources": list(R),
        "cost_bound": "1.16",
        "total_tx": 20,
        "rate": 5,
        "seed": 1,
    }
    doc.update(overrides)
    return parse_run_config(doc)


@pytest.fixture
def cfg_factory():
    return make_cfg


# -- acceptance reporting: one PASS/FAIL line per criterion -------------------

_results: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        prev = _results.get(label)
        status = "PASS" if rep.passed else "FAIL"
        _results[label] = "FAIL" if prev == "FAIL" else status


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_results, key=lambda s: int(s.split(".")[0])):
        terminalreporter.write_line(f"[{_results[label]}] {label}")
