import numpy as np
import pytest

from magduality.grid import GridSpec, VectorField

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def unit16():
    return GridSpec(1.0, 16, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(spec: GridSpec, rng) -> VectorField:
    return VectorField(spec, rng.standard_normal((3,) + spec.shape))
