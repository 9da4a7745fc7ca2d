import random

import pytest

from dtlsperf.flow_hash import HashKey


@pytest.fixture
def rnd():
    return random.Random(1234)


@pytest.fixture
def fixed_key():
    return HashKey.from_bytes(bytes(range(16)))


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the summary prints them all at the end."""
    lines = request.config._acceptance_lines

    def record(number, ok, detail, gating=True):
        if ok is None:
            status = "REPORT"
        else:
            status = "PASS" if ok else "FAIL"
        if not gating and ok is not None:
            status += " (non-gating)"
        line = f"criterion {number:>2}: {status:<18} {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
