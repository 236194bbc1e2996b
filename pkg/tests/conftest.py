import numpy as np
import pytest
from hypothesis import settings

from fvfgraph.mesh import Mesh2D, build_mesh, structured_grid
from fvfgraph.meshgen import random_delaunay_with_hole

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def two_triangle_square():
    pts = [(0, 0), (1, 0), (1, 1), (0, 1)]
    return build_mesh(pts, [(0, 1, 2), (0, 2, 3)], farfield=[(0, 1), (1, 2), (2, 3), (3, 0)])


def two_unit_squares():
    pts = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]
    cells = [(0, 1, 4, 3), (1, 2, 5, 4)]
    # each cell has three farfield faces, so it is built without validation
    return Mesh2D(pts, cells, farfield=[(0, 1), (1, 2), (2, 5), (5, 4), (4, 3), (3, 0)])


def grid_with_hole():
    return structured_grid(3, 3, holes=[(1, 1)])


@pytest.fixture
def square2():
    return two_triangle_square()


@pytest.fixture
def hole3():
    return grid_with_hole()


@pytest.fixture(scope="session")
def random_meshes():
    rng = np.random.default_rng(1234)
    return [random_delaunay_with_hole(rng, int(n)) for n in rng.integers(50, 200, size=12)]
