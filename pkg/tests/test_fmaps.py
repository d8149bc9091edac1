import numpy as np
import pytest

from shapediff.fmaps import (FunctionalMap, PointMap, compose_via_template,
                             fmap_from_descriptors, fmap_from_pointmap,
                             load_fmap, load_pointmap, pairwise_lstsq,
                             pointmap_from_fmap, save_fmap, save_pointmap,
                             zoomout, _nearest_rows)
from shapediff.mesh import cotan_laplacian, vertex_area_matrix
from shapediff.spectral import eigenbasis
from shapediff.synth import ShapeFamilyConfig, deform


@pytest.fixture(scope="module")
def near_isometric_pair(humanoid, humanoid_ops):
    """Template + small deformation, same connectivity, identity ground truth."""
    L, A = humanoid_ops
    deform_basis = eigenbasis(L, A, 16, seed=0)
    pair = deform(humanoid, deform_basis, 7, ShapeFamilyConfig(amplitude=0.005))
    b1 = eigenbasis(L, A, 96, seed=0)
    m2 = pair.shape
    b2 = eigenbasis(cotan_laplacian(m2), vertex_area_matrix(m2), 96, seed=1)
    return humanoid, b1, m2, b2


class TestFromPointmap:
    def test_self_pair_identity(self, humanoid_basis):
        ident = PointMap(np.arange(humanoid_basis.v))
        C = fmap_from_pointmap(ident, humanoid_basis, humanoid_basis)
        assert np.abs(C.matrix - np.eye(humanoid_basis.n)).max() < 1e-8

    def test_sign_covariance_exact(self, humanoid_basis):
        rng = np.random.default_rng(0)
        pi = PointMap(rng.integers(0, humanoid_basis.v, humanoid_basis.v))
        C = fmap_from_pointmap(pi, humanoid_basis, humanoid_basis)
        s1 = rng.choice([-1.0, 1.0], humanoid_basis.n)
        s2 = rng.choice([-1.0, 1.0], humanoid_basis.n)
        C_flipped = fmap_from_pointmap(pi, humanoid_basis.with_signs(s1),
                                       humanoid_basis.with_signs(s2))
        expected = np.diag(s2) @ C.matrix @ np.diag(s1)
        assert np.array_equal(C_flipped.matrix, expected)

    def test_rectangular_resolution(self, humanoid_basis):
        ident = PointMap(np.arange(humanoid_basis.v))
        C = fmap_from_pointmap(ident, humanoid_basis.truncated(16),
                               humanoid_basis.truncated(24))
        assert C.matrix.shape == (24, 16)
        assert C.resolution == (16, 24)


class TestRoundtrip:
    def test_pointmap_recovery(self, near_isometric_pair):
        m1, b1, m2, b2 = near_isometric_pair
        gt = PointMap(np.arange(m1.num_vertices))
        C = fmap_from_pointmap(gt, b1, b2)
        pi = pointmap_from_fmap(C, b1, b2)
        exact = (pi.targets == gt.targets).mean()
        assert exact >= 0.95

    def test_zoomout_upsamples_without_degrading(self, near_isometric_pair):
        m1, b1, m2, b2 = near_isometric_pair
        gt = PointMap(np.arange(m1.num_vertices))
        C32 = fmap_from_pointmap(gt, b1.truncated(32), b2.truncated(32))
        pi32 = pointmap_from_fmap(C32, b1.truncated(32), b2.truncated(32))
        C96 = zoomout(C32, b1, b2, 96)
        assert C96.matrix.shape == (96, 96)
        pi96 = pointmap_from_fmap(C96, b1, b2)
        err32 = (pi32.targets != gt.targets).mean()
        err96 = (pi96.targets != gt.targets).mean()
        assert err96 <= err32 * 1.05 + 1e-12

    def test_zoomout_step(self, near_isometric_pair):
        m1, b1, m2, b2 = near_isometric_pair
        gt = PointMap(np.arange(m1.num_vertices))
        C32 = fmap_from_pointmap(gt, b1.truncated(32), b2.truncated(32))
        C = zoomout(C32, b1, b2, 96, step=8)
        assert C.matrix.shape == (96, 96)


class TestCompose:
    def test_identity_template_leg(self, humanoid_basis):
        rng = np.random.default_rng(3)
        C1T = FunctionalMap(rng.standard_normal((32, 32)), "s1", "T")
        I2T = FunctionalMap(np.eye(32), "s2", "T")
        C12 = compose_via_template(C1T, I2T)
        assert np.allclose(C12.matrix, C1T.matrix, atol=1e-12)
        assert C12.src_basis_id == "s1"
        assert C12.dst_basis_id == "s2"

    def test_least_squares_composition(self):
        rng = np.random.default_rng(4)
        C1T = FunctionalMap(rng.standard_normal((32, 32)), "s1", "T")
        C2T = FunctionalMap(rng.standard_normal((32, 32)), "s2", "T")
        C12 = compose_via_template(C1T, C2T)
        # C12 is the least-squares solution of C2T @ X = C1T
        assert np.allclose(C2T.matrix @ C12.matrix, C1T.matrix, atol=1e-9)

    def test_conditioning_warning(self):
        bad = np.zeros((8, 8))
        bad[0, 0] = 1.0
        C2T = FunctionalMap(bad, "s2", "T")
        C1T = FunctionalMap(np.eye(8), "s1", "T")
        C12 = compose_via_template(C1T, C2T)
        assert C12.warnings


class TestNearestRows:
    def test_exact_match(self):
        pts = np.arange(12, dtype=float).reshape(4, 3)
        idx = _nearest_rows(pts, pts[[2, 0]])
        assert idx.tolist() == [2, 0]

    def test_tie_break_lowest_index(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
        idx = _nearest_rows(pts, np.array([[0.0, 0.0]]))
        assert idx.tolist() == [0]

    def test_high_dim_matches_low_dim_path(self):
        rng = np.random.default_rng(5)
        pts = rng.standard_normal((200, 40))
        q = rng.standard_normal((50, 40))
        brute = np.array([np.argmin(((pts - row) ** 2).sum(axis=1)) for row in q])
        assert np.array_equal(_nearest_rows(pts, q), brute)


class TestDescriptorFit:
    @staticmethod
    def _random_bandlimited(basis, p, seed):
        from shapediff.descriptors import DescriptorField
        rng = np.random.default_rng(seed)
        values = basis.evecs @ rng.standard_normal((basis.n, p))
        return DescriptorField(values, np.arange(p, dtype=float), basis.mesh_id)

    def test_recovers_identity(self, humanoid_basis):
        F = self._random_bandlimited(humanoid_basis, 64, 0)
        C = fmap_from_descriptors(F, F, humanoid_basis, humanoid_basis, ridge=0.0)
        assert np.abs(C.matrix - np.eye(humanoid_basis.n)).max() < 1e-6

    def test_recovers_pointmap_solution(self, humanoid_basis):
        from shapediff.descriptors import DescriptorField
        rng = np.random.default_rng(1)
        pi = PointMap(rng.integers(0, humanoid_basis.v, humanoid_basis.v))
        F1 = self._random_bandlimited(humanoid_basis, 32, 2)
        F2 = DescriptorField(F1.values[pi.targets], F1.energies, "moved")
        C_ref = fmap_from_pointmap(pi, humanoid_basis, humanoid_basis)
        C = fmap_from_descriptors(F1, F2, humanoid_basis, humanoid_basis,
                                  ridge=0.0)
        assert np.abs(C.matrix - C_ref.matrix).max() < 1e-4

    def test_large_ridge_shrinks(self, humanoid_basis):
        F = self._random_bandlimited(humanoid_basis, 64, 3)
        C = fmap_from_descriptors(F, F, humanoid_basis, humanoid_basis,
                                  ridge=1e12)
        assert np.abs(C.matrix).max() < 1e-6


class TestPairwiseLstsq:
    def test_identity_on_self(self, humanoid_basis):
        ident = PointMap(np.arange(humanoid_basis.v))
        C = pairwise_lstsq(ident, ident, humanoid_basis, humanoid_basis, 32)
        assert np.abs(C.matrix - np.eye(32)).max() < 1e-8


class TestIO:
    def test_fmap_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        C = FunctionalMap(rng.standard_normal((16, 24)), "a", "b")
        save_fmap(tmp_path / "c.fmap", C)
        again = load_fmap(tmp_path / "c.fmap")
        assert np.array_equal(again.matrix, C.matrix)
        assert again.src_basis_id == "a"

    def test_pointmap_roundtrip(self, tmp_path):
        pi = PointMap(np.array([3, 1, 4, 1, 5]))
        save_pointmap(tmp_path / "p.map", pi)
        again = load_pointmap(tmp_path / "p.map")
        assert np.array_equal(again.targets, pi.targets)
