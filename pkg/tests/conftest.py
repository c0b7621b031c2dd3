import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

HERE = Path(__file__).parent


def permutations(k: int):
    return st.permutations(list(range(k)))


@st.composite
def grid_and_perm(draw, sides=(2, 3, 4, 5)):
    n = draw(st.sampled_from(sides))
    return n, draw(permutations(n * n))


@pytest.fixture
def fixtures_dir() -> Path:
    return HERE / "fixtures"


@pytest.fixture
def golden_dir() -> Path:
    return HERE / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if call.excinfo is not None:
        detail = detail or call.excinfo.exconly().splitlines()[0][:160]
        _CRITERIA[number] = (title, "FAIL", detail)
    else:
        _CRITERIA[number] = (title, "PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}: {detail}")
