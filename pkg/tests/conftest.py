from hypothesis import settings

# first calls compile numba kernels, so wall-clock deadlines are meaningless
settings.register_profile("userial", deadline=None, derandomize=True)
settings.load_profile("userial")

import pytest

_CRITERIA = []


@pytest.fixture
def record_criterion():
    def record(n, ok, detail):
        _CRITERIA.append((n, ok, detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
