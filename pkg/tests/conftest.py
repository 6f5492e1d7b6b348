"""Shared pytest hooks: collect acceptance summary lines and print them at the end."""

from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return _LINES


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_LINES, key=lambda s: s.split("]", 1)[0].split("[", 1)[1].zfill(3)):
        terminalreporter.write_line(line)
