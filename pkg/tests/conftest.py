import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_OUTCOMES = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = ""
        if rep.failed and rep.longrepr is not None:
            detail = str(getattr(rep.longrepr, "reprcrash", None) and rep.longrepr.reprcrash.message or "")
        _OUTCOMES[n] = (text, rep.outcome, f"{rep.duration:.1f}s", detail.splitlines()[0] if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        text, outcome, took, detail = _OUTCOMES[n]
        tag = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        line = f"[{tag}] {n}. {text} ({took})"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
