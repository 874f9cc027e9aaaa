import pytest

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the terminal summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA.append((marker.args[0], report.outcome, item.name))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    grouped = {}
    for name, outcome, test in _CRITERIA:
        grouped.setdefault(name, []).append((outcome, test))
    terminalreporter.section("acceptance criteria")
    for name, results in grouped.items():
        failed = [test for outcome, test in results if outcome != "passed"]
        verdict = "FAIL" if failed else "PASS"
        detail = f"  failing: {', '.join(failed)}" if failed else ""
        terminalreporter.write_line(f"{verdict}  {name}  ({len(results)} checks){detail}")
