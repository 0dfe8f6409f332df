import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from meshtear.mesh import build_mesh
from meshtear.synth import flat_grid, reference_blob, skinned_cylinder
from meshtear.tear import ScalpelSample, build_cell


@pytest.fixture(scope="session")
def blob():
    return reference_blob()


@pytest.fixture(scope="session")
def cylinder():
    return skinned_cylinder()


@pytest.fixture
def grid():
    return flat_grid(30, 30)


@pytest.fixture
def unit_triangle():
    return build_mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])


def slab_cell(x0: float, x1: float, extent: float = 5.0):
    """Axis-aligned cell occupying x in [x0, x1], |y|,|z| < extent."""
    mid = 0.5 * (x0 + x1)
    s0 = ScalpelSample((mid, -extent, extent), (mid, -extent, -extent))
    s1 = ScalpelSample((mid, extent, extent), (mid, extent, -extent))
    return build_cell(s0, s1, x1 - x0)


@pytest.fixture
def make_slab_cell():
    return slab_cell
