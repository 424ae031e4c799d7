"""Per-criterion pass/fail summary for tests marked ``acceptance(criterion=n)``."""
from collections import defaultdict

import pytest

_outcomes = defaultdict(list)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    crit = mark.kwargs.get("criterion", mark.args[0] if mark.args else None)
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes[int(crit)].append((item.nodeid, rep.passed))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_outcomes):
        results = _outcomes[crit]
        ok = all(p for _, p in results)
        failed = [n.split("::")[-1] for n, p in results if not p]
        line = f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'} ({len(results)} test(s))"
        if failed:
            line += " failed: " + ", ".join(failed)
        terminalreporter.write_line(line)
