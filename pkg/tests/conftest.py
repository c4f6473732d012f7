import pytest

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.fixture
def record(request):
    """Attach a measured value to the current acceptance criterion's summary line."""

    def add(text: str):
        request.node.user_properties.append(("detail", text))

    return add


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marker = next((m for m in getattr(report, "_criterion", []) if m), None)
    if marker is None:
        return
    n, title = marker
    entry = _results.setdefault(n, {"title": title, "passed": True, "details": []})
    entry["passed"] &= report.passed
    entry["details"] += [v for k, v in report.user_properties if k == "detail"]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    report._criterion = [tuple(m.args)] if m else []


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        r = _results[n]
        status = "PASS" if r["passed"] else "FAIL"
        detail = f" ({'; '.join(r['details'])})" if r["details"] else ""
        terminalreporter.write_line(f"criterion {n}: {status} - {r['title']}{detail}")
