from __future__ import annotations

import pytest

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance(request, capsys):
    """Record one acceptance line; it is echoed immediately and repeated in the summary."""

    def record(cid: str, title: str, passed: bool, detail: str = "") -> bool:
        line = f"[{cid}] {'PASS' if passed else 'FAIL'} {title}" + (f" | {detail}" if detail else "")
        request.config.stash[ACCEPTANCE].append(line)
        with capsys.disabled():
            print(f"\n{line}", flush=True)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
