import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from srwalks import models

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def heis():
    return models.get_model("heisenberg")


@pytest.fixture(scope="session")
def twist():
    return models.get_model("twisted")


@pytest.fixture(scope="session")
def ell():
    return models.get_model("ellipsoid")


@pytest.fixture(scope="session")
def ellf():
    return models.get_model("ellipsoid-frames")


def unit_horizontal(model, x, rng):
    from srwalks import srgeom
    c = rng.standard_normal(np.shape(x)[:-1] + (model.k,))
    c /= np.linalg.norm(c, axis=-1, keepdims=True)
    return np.einsum("...ia,...a->...i", srgeom.horizontal_matrix(model.structure, x), c)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion, then assert it."""
    def _report(number, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").split(".")[0])):
            terminalreporter.write_line(line)
