import pytest

# criterion number -> (title, outcome, detail); filled by the acceptance suite
ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.call_report = rep


class Criterion:
    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.detail = ""


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    rec = Criterion(*marker.args)
    yield rec
    rep = getattr(request.node, "call_report", None)
    passed = rep is not None and rep.passed
    ACCEPTANCE[rec.number] = (rec.title, "PASS" if passed else "FAIL", rec.detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, outcome, detail = ACCEPTANCE[number]
        line = f"criterion {number:2d} {outcome}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
