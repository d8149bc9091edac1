import numpy as np
import pytest
import scipy.linalg

from shapediff.mesh import cotan_laplacian, vertex_area_matrix
from shapediff.spectral import (eigenbasis, load_basis, project, save_basis,
                                spectral_smooth, synthesize)
from shapediff.synth import make_template

from conftest import dense_laplacian_and_mass


class TestEigensolverOracle:
    def test_matches_dense_generalized_solver(self):
        mesh = make_template("sphere", 150)
        assert mesh.num_vertices <= 500
        L = cotan_laplacian(mesh)
        A = vertex_area_matrix(mesh)
        basis = eigenbasis(L, A, 24, seed=0)
        L_ref, M_ref = dense_laplacian_and_mass(mesh)
        ref = scipy.linalg.eigh(L_ref, np.diag(M_ref), eigvals_only=True)
        assert abs(basis.evals[0] - ref[0]) < 1e-8  # both are the zero mode
        rel = np.abs(basis.evals[1:] - ref[1:24]) / np.abs(ref[1:24])
        assert rel.max() < 1e-6

    def test_sphere_multiplicities(self, sphere_basis):
        # Laplacian eigenvalues on a sphere come in groups of 2l+1
        groups = sphere_basis.multiplicity_groups(rel_tol=0.05)
        sizes = [len(g) for g in groups[:3]]
        assert sizes == [1, 3, 5]

    def test_sphere_eigenvalues_analytic(self, sphere_basis):
        # unit-area sphere: radius r with 4 pi r^2 = 1, eigenvalues l(l+1)/r^2
        r2 = 1.0 / (4.0 * np.pi)
        for l, idx in ((1, 1), (2, 4)):
            expected = l * (l + 1) / r2
            assert sphere_basis.evals[idx] == pytest.approx(expected, rel=0.02)


class TestBasisProperties:
    def test_orthonormal_in_mass_inner_product(self, humanoid_basis):
        G = humanoid_basis.inner(humanoid_basis.evecs, humanoid_basis.evecs)
        assert np.abs(G - np.eye(humanoid_basis.n)).max() < 1e-10

    def test_first_eigenpair_constant(self, humanoid_basis):
        assert humanoid_basis.evals[0] == pytest.approx(0.0, abs=1e-8)
        col = humanoid_basis.evecs[:, 0]
        assert np.abs(col - col[0]).max() < 1e-6

    def test_deterministic_given_seed(self, humanoid_ops):
        L, A = humanoid_ops
        b1 = eigenbasis(L, A, 16, seed=7)
        b2 = eigenbasis(L, A, 16, seed=7)
        assert np.array_equal(b1.evecs, b2.evecs)
        assert np.array_equal(b1.evals, b2.evals)

    def test_truncated(self, humanoid_basis):
        t = humanoid_basis.truncated(8)
        assert t.n == 8
        assert np.array_equal(t.evecs, humanoid_basis.evecs[:, :8])
        with pytest.raises(ValueError):
            humanoid_basis.truncated(999)

    def test_with_signs(self, humanoid_basis):
        s = np.where(np.arange(32) % 2 == 0, 1.0, -1.0)
        flipped = humanoid_basis.with_signs(s)
        assert np.array_equal(flipped.evecs[:, 1], -humanoid_basis.evecs[:, 1])
        assert np.array_equal(flipped.evecs[:, 0], humanoid_basis.evecs[:, 0])


class TestProjection:
    def test_project_synthesize_roundtrip(self, humanoid_basis):
        rng = np.random.default_rng(0)
        coeffs = rng.standard_normal(humanoid_basis.n)
        f = synthesize(humanoid_basis, coeffs)
        back = project(humanoid_basis, f)
        assert np.abs(back - coeffs).max() < 1e-10

    def test_smooth_preserves_constants(self, humanoid_basis):
        f = np.ones(humanoid_basis.v)
        out = spectral_smooth(humanoid_basis, f, 0.1)
        assert np.abs(out - 1.0).max() < 1e-8

    def test_smooth_damps_high_frequencies(self, humanoid_basis):
        hi = humanoid_basis.evecs[:, -1]
        out = spectral_smooth(humanoid_basis, hi, 0.01)
        before = humanoid_basis.inner(hi, hi)
        after = humanoid_basis.inner(out, out)
        assert after < before * np.exp(-2 * humanoid_basis.evals[-1] * 0.009)


class TestBasisIO:
    def test_save_load_roundtrip(self, humanoid_basis, tmp_path):
        path = tmp_path / "b.basis"
        save_basis(path, humanoid_basis)
        again = load_basis(path)
        assert np.array_equal(again.evals, humanoid_basis.evals)
        assert np.array_equal(again.evecs, humanoid_basis.evecs)
        assert np.array_equal(again.area, humanoid_basis.area)

    def test_save_is_deterministic(self, humanoid_basis, tmp_path):
        save_basis(tmp_path / "a.basis", humanoid_basis)
        save_basis(tmp_path / "b.basis", humanoid_basis)
        assert (tmp_path / "a.basis").read_bytes() == (tmp_path / "b.basis").read_bytes()
