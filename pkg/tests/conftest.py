import numpy as np
import pytest

from shapediff.mesh import cotan_laplacian, vertex_area_matrix
from shapediff.spectral import eigenbasis
from shapediff.synth import make_template


@pytest.fixture(scope="session")
def sphere():
    return make_template("sphere", 600)


@pytest.fixture(scope="session")
def humanoid():
    return make_template("humanoid-proxy", 500)


@pytest.fixture(scope="session")
def bar():
    return make_template("bar", 500)


@pytest.fixture(scope="session")
def sphere_ops(sphere):
    return cotan_laplacian(sphere), vertex_area_matrix(sphere)


@pytest.fixture(scope="session")
def humanoid_ops(humanoid):
    return cotan_laplacian(humanoid), vertex_area_matrix(humanoid)


@pytest.fixture(scope="session")
def sphere_basis(sphere_ops):
    L, A = sphere_ops
    return eigenbasis(L, A, 32, seed=0, mesh_id="sphere")


@pytest.fixture(scope="session")
def humanoid_basis(humanoid_ops):
    L, A = humanoid_ops
    return eigenbasis(L, A, 32, seed=0, mesh_id="humanoid")


def dense_laplacian_and_mass(mesh):
    """Reference finite-element assembly, one triangle at a time."""
    v = mesh.num_vertices
    L = np.zeros((v, v))
    M = np.zeros(v)
    for tri in mesh.triangles:
        p = mesh.vertices[tri]
        area = 0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0]))
        for k in range(3):
            i, j, o = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
            u = mesh.vertices[i] - mesh.vertices[o]
            w = mesh.vertices[j] - mesh.vertices[o]
            cot = np.clip(u @ w / np.linalg.norm(np.cross(u, w)), -1e4, 1e4)
            L[i, j] -= 0.5 * cot
            L[j, i] -= 0.5 * cot
            L[i, i] += 0.5 * cot
            L[j, j] += 0.5 * cot
            M[tri[k]] += area / 3.0
    return L, M
