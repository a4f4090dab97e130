import re

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion test")


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m or report.when == "teardown" and report.passed:
        return
    entry = _CRITERIA.setdefault(int(m[1]), {"name": m[2], "ok": True, "time": 0.0})
    entry["time"] += report.duration
    if report.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        e = _CRITERIA[k]
        verdict = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {k:2d}  {verdict}  {e['time']:6.1f}s  {e['name'].replace('_', ' ')}")
