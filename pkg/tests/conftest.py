import numpy as np
import pytest

from vobb import fixtures, mesh as mesh_mod, outside


@pytest.fixture(scope="session")
def cube_mesh():
    return mesh_mod.build_mesh(*fixtures.cube())


@pytest.fixture(scope="session")
def box4_mesh():
    return mesh_mod.build_mesh(*fixtures.box((4.0, 1.0, 1.0)))


@pytest.fixture(scope="session")
def dumbbell_mesh():
    return mesh_mod.build_mesh(*fixtures.dumbbell())


@pytest.fixture(scope="session")
def pair_mesh():
    return mesh_mod.build_mesh(*fixtures.cube_pair())


@pytest.fixture(scope="session")
def icosphere_mesh():
    return mesh_mod.build_mesh(*fixtures.icosphere())


@pytest.fixture(scope="session")
def grid8():
    return outside.build_direction_grid(8)


@pytest.fixture(scope="session")
def grid16():
    return outside.build_direction_grid(16)


@pytest.fixture(scope="session")
def grid32():
    return outside.build_direction_grid(32)


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels(cube_mesh):
    """Compile the numba kernels once so timed tests measure work, not JIT."""
    origins = np.array([[0.0, 0.0, -5.0]])
    dirs = np.array([[0.0, 0.0, 1.0]])
    mesh_mod.batch_ray_query(cube_mesh, origins, dirs, np.array([10.0]))
    mesh_mod.point_in_solid(cube_mesh, np.array([0.1, 0.1, 0.1]))
