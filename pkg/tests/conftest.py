import re

import pytest

_CRITERION = re.compile(r"test_criterion_(\d+)")
_results: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = _CRITERION.match(item.name)
    if not m:
        return
    num = int(m.group(1))
    entry = _results.setdefault(num, {"title": (item.function.__doc__ or "").strip().splitlines()[0]
                                      if item.function.__doc__ else item.name, "ok": True})
    if rep.failed or (rep.when == "call" and rep.outcome != "passed"):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        r = _results[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if r['ok'] else 'FAIL'}  {r['title']}")
