from pathlib import Path

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
FIXTURE_SESSIONS = ROOT / "tests" / "fixtures" / "sessions"
CONFIGS = ROOT / "configs"

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "seconds": 0.0, "ran": False})
    # setup time counts too: the recovery experiments run inside module fixtures
    if rep.when in ("setup", "call"):
        entry["seconds"] += rep.duration
    if rep.when == "call":
        entry["ran"] = True
    if rep.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["ok"] and e["ran"] else ("FAIL" if e["ran"] or not e["ok"] else "SKIP")
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {e['seconds']:8.2f}s  {e['title']}")


@pytest.fixture
def fixture_sessions():
    return [FIXTURE_SESSIONS / "groupA", FIXTURE_SESSIONS / "groupB"]

