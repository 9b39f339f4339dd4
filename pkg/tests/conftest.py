"""Shared fixtures and the acceptance-criteria summary hook."""

from __future__ import annotations

import re

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::(test_criterion_\d+\w*)", report.nodeid)
    if not m:
        return
    name = m.group(1)
    if report.skipped:
        _ACCEPTANCE[name] = ("SKIP", report.nodeid)
    elif report.when == "call":
        _ACCEPTANCE[name] = ("PASS" if report.passed else "FAIL", report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status, _ = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{status:4s}  {name}")
