import numpy as np
import pytest

from signstruct import _kernels

KERNELS = [pytest.param(_kernels.numpy_impl, id="numpy")]
if _kernels.HAVE_NUMBA:
    KERNELS.append(pytest.param(_kernels.numba_impl, id="numba"))


@pytest.fixture(params=KERNELS)
def kernels(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(dim, rng, complex_=False):
    v = rng.standard_normal(dim)
    if complex_:
        v = v + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


# one summary line per acceptance criterion, shown after the test run
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        num, title = mark.args
        _CRITERIA[num] = (rep.outcome, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        outcome, title = _CRITERIA[num]
        word = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"criterion {num:2d}: {word}  {title}")
