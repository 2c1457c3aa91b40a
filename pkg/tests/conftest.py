import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False, "why": ""})
    if rep.when == "call" or rep.failed:
        entry["ran"] = entry["ran"] or rep.when == "call"
        if rep.failed:
            entry["ok"] = False
            msg = getattr(rep.longrepr, "reprcrash", None)
            entry["why"] = entry["why"] or (msg.message.splitlines()[0] if msg else rep.when)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL" if not e["ok"] else "SKIP"
        line = f"criterion {number:2d}  {status}  {e['title']}"
        if e["why"]:
            line += f"  ({e['why'][:100]})"
        terminalreporter.write_line(line)
