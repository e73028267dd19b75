import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    from pgvae.rng import Rng

    return Rng(1234)


def finite_arrays(shape, lo=-3.0, hi=3.0):
    from hypothesis.extra.numpy import arrays
    from hypothesis.strategies import floats

    return arrays(np.float64, shape, elements=floats(lo, hi, allow_nan=False, width=64))


# --- acceptance summary -------------------------------------------------
# Tests marked ``criterion(n, title)`` may attach a one-line detail through
# the ``criterion_detail`` fixture; the terminal summary prints one line each.

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def criterion_detail(request):
    details = []
    request.node.stash_details = details
    return details.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not report.failed:
        return
    number, title = mark.args
    detail = "; ".join(getattr(item, "stash_details", []))
    passed = report.passed and _CRITERIA.get(number, ("PASS",))[0] == "PASS"
    _CRITERIA[number] = ("PASS" if passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
