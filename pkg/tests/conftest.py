import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_acceptance: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when == "teardown" and rep.passed:
        return
    num, title = mark.args
    ok, _ = _acceptance.get(num, (True, title))
    if rep.failed or rep.skipped and rep.when == "call":
        ok = False
    _acceptance[num] = (ok, title)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_acceptance):
        ok, title = _acceptance[num]
        terminalreporter.write_line(f"ACCEPTANCE {num} {'PASS' if ok else 'FAIL'}  {title}")
