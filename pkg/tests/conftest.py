import json
import os

import pytest

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []
    config.addinivalue_line("markers", "slow: long-running acceptance training")


@pytest.fixture
def record(request):
    """Register one acceptance line; returns ``ok`` so tests can assert on it."""
    lines = request.config.stash[_ACCEPTANCE]

    def _record(criterion: int, ok: bool, detail: str, **data):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append({"criterion": criterion, "ok": bool(ok), "line": line, **data})
        return bool(ok)
    return _record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash[_ACCEPTANCE], key=lambda r: r["criterion"])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for r in lines:
        terminalreporter.write_line(r["line"])
    path = os.environ.get("CONCEPTACT_ACCEPTANCE_REPORT")
    if path:
        with open(path, "w") as fh:
            json.dump(lines, fh, indent=1, default=float)
