import numpy as np
import pytest

from trackscd.masks import Mask, MaskSet


def rect(shape, x, y, w, h):
    """Boolean bitmap with a filled w x h rectangle whose top-left corner is (x, y)."""
    out = np.zeros(shape, dtype=bool)
    out[y : y + h, x : x + w] = True
    return out


def rect_mask(id, shape, x, y, w, h):
    return Mask(id, rect(shape, x, y, w, h))


def maskset(shape, **rects):
    """maskset((8, 8), m1=(x, y, w, h), m2=...) with ids taken from the key suffix."""
    return MaskSet([rect_mask(int(k[1:]), shape, *v) for k, v in rects.items()], shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion in the terminal summary

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    failed = rep.failed or rep.skipped
    if rep.when == "call" or failed:
        prev = _criteria.get(number, (title, "PASS"))[1]
        _criteria[number] = (title, "FAIL" if failed or prev == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {title}")
