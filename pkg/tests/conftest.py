import numpy as np
import pytest

from mimax import dual as md
from mimax import mesh as mm


@pytest.fixture(scope="session")
def base_mesh():
    return mm.build_base_cube_pyramids()


@pytest.fixture(scope="session")
def mesh_r1(base_mesh):
    return mm.refine_uniform(base_mesh)


@pytest.fixture(scope="session")
def mesh_r2(mesh_r1):
    return mm.refine_uniform(mesh_r1)


@pytest.fixture(scope="session")
def mesh_r3(mesh_r2):
    return mm.refine_uniform(mesh_r2)


@pytest.fixture(scope="session")
def bcc1():
    return mm.build_bcc_mesh(1)


@pytest.fixture(scope="session")
def bcc2():
    return mm.build_bcc_mesh(2)


@pytest.fixture(scope="session")
def base_dual(base_mesh):
    return md.build_dual(base_mesh)


@pytest.fixture(scope="session")
def dual_r1(mesh_r1):
    return md.build_dual(mesh_r1)


@pytest.fixture(scope="session")
def dual_r2(mesh_r2):
    return md.build_dual(mesh_r2)


@pytest.fixture(scope="session")
def dual_bcc2(bcc2):
    return md.build_dual(bcc2)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240613)
