"""Shared pytest plumbing: a per-criterion summary for the acceptance suite.

Acceptance tests are named test_c<N>_... in test_acceptance.py; after the
run, one PASS/FAIL line per criterion is printed in the terminal summary.
"""

import re

_CRITERIA = {
    1: "logic form round-trip and reference BIO row",
    2: "metrics agree with brute-force oracle",
    3: "AMR parser properties and typed errors",
    4: "pipeline conditioning exact per plan",
    5: "aggregator voting properties",
    6: "replay determinism against golden metrics",
    7: "dataset statistics and fixture counts",
    8: "seed aggregation closed form and formatting",
}

_ACCEPTANCE_RE = re.compile(r"test_acceptance\.py::test_c(\d+)_")
_results: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    match = _ACCEPTANCE_RE.search(report.nodeid)
    if not match:
        return
    criterion = int(match.group(1))
    _results.setdefault(criterion, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_CRITERIA):
        outcomes = _results.get(criterion)
        if not outcomes:
            continue
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {criterion} ({_CRITERIA[criterion]}): {status}")
