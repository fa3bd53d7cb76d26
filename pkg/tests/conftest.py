import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from igabem.geometry import Geometry, flat_square, shipped_sphere  # noqa: E402
from igabem.splines import KnotVector, PatchSurface  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def sphere():
    return shipped_sphere()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def square_patch(origin=(0.0, 0.0, 0.0), size=1.0, rotate=False):
    """Bilinear square; ``rotate`` turns the parametrization by 180 degrees."""
    kv = KnotVector([0, 0, 1, 1], 1)
    g = np.array([0.0, size])
    cp = np.zeros((2, 2, 3))
    cp[..., 0], cp[..., 1] = np.meshgrid(g, g, indexing="ij")
    if rotate:
        cp = cp[::-1, ::-1].copy()
    return PatchSurface(kv, kv, cp + np.asarray(origin))


@pytest.fixture
def two_squares():
    """Unit squares [0,1]x[0,1] and [1,2]x[0,1] in the plane z = 0."""
    return Geometry([square_patch(), square_patch((1.0, 0.0, 0.0))])


@pytest.fixture
def unit_square():
    return flat_square(1.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
