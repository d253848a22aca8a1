"""Shared pytest hooks: acceptance verdict lines are echoed in the summary."""
from __future__ import annotations

import pytest

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def acceptance_log(request):
    """List collecting one ``CRITERION n: PASS|FAIL`` line per criterion."""
    return request.config.stash[_VERDICTS]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
