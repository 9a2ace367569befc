import re
from collections import defaultdict

import pytest

CRITERION = re.compile(r"test_acceptance\.py::TestCriterion(\d+)(\w*)::")
_results: dict[int, list[bool]] = defaultdict(list)
_titles: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        n = int(m[1])
        _results[n].append(report.outcome == "passed")
        _titles[n] = re.sub(r"(?<!^)(?=[A-Z])", " ", m[2]).lower()


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        runs = _results[n]
        status = "PASS" if all(runs) else "FAIL"
        terminalreporter.write_line(
            f"criterion {n} ({_titles[n]}): {status}  {sum(runs)}/{len(runs)} checks passed")
