import pytest

_results: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, budget): acceptance criterion with a runtime budget")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and rep.passed:
        return
    number, title = mark.args[:2]
    budget = mark.kwargs.get("budget")
    status = "PASS" if rep.passed else "FAIL"
    if rep.passed and budget is not None and rep.duration > budget:
        status = "FAIL"
        rep.outcome = "failed"
        rep.longrepr = f"criterion {number} took {rep.duration:.1f} s, budget {budget} s"
    if rep.when == "call" or not rep.passed:
        _results[number] = (title, status, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, status, secs = _results[number]
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} ({secs:.1f} s)")
