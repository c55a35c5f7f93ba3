"""Shared test plumbing.

The acceptance tests register one verdict line each; the summary hook prints
them as a block at the end of the run so `pytest -v` output carries a
criterion-by-criterion scoreboard next to the usual test statuses.
"""
from __future__ import annotations

import pytest

_ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Recorder for one acceptance criterion verdict line."""

    def _record(index: int, passed: bool, detail: str) -> None:
        tag = "PASS" if passed else "FAIL"
        _ACCEPTANCE_LINES[index] = f"criterion {index:2d}: {tag}  {detail}"

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for index in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(_ACCEPTANCE_LINES[index])
