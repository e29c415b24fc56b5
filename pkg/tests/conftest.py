import pytest

# one summary line per acceptance criterion, collected from test reports
_LINES = {}
ACCEPTANCE_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by the test")
    config.addinivalue_line("markers", "acceptance: acceptance suite")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    status = "PASS" if report.passed else "FAIL"
    detail = ACCEPTANCE_DETAILS.get(report.nodeid, "")
    _LINES[report.nodeid] = f"{status}  {marker}" + (f"  [{detail}]" if detail else "")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _LINES.values():
        terminalreporter.write_line(line)


@pytest.fixture
def detail(request):
    """Attach a short measured summary to the acceptance line of this test."""

    def record(text):
        ACCEPTANCE_DETAILS[request.node.nodeid] = text

    return record
