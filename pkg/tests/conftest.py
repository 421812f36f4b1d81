import time

import pytest

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    props = dict(item.user_properties)
    _criteria.append((marker.args[0], marker.args[1], rep.passed, rep.duration,
                      props.get("detail", "")))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, dur, detail in sorted(_criteria):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {num}: {title} ({dur:.1f} s)"
        terminalreporter.write_line(line)
        if detail:
            terminalreporter.write_line(f"      {detail}")


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


@pytest.fixture
def timer():
    return Timer
