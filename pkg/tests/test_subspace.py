import numpy as np
import pytest

from hybriddp.errors import ValidationError
from hybriddp.subspace import (
    OrthoBasis,
    approx_eigen,
    complete_basis,
    generate_basis,
    gram_schmidt,
    principal_angle,
    subspace_stats,
)


def top_eigvecs(M, r):
    w, V = np.linalg.eigh(M @ M.T)
    return V[:, np.argsort(w)[::-1][:r]]


class TestGramSchmidt:
    def test_identity_unchanged(self):
        np.testing.assert_array_equal(gram_schmidt(np.eye(3)), np.eye(3))

    def test_classic_2d(self):
        Q = gram_schmidt(np.array([[1.0, 1.0], [0.0, 1.0]]))
        np.testing.assert_allclose(Q, np.eye(2), atol=1e-15)

    def test_random_orthonormal(self):
        Q = gram_schmidt(np.random.default_rng(0).normal(size=(8, 3)))
        np.testing.assert_allclose(Q.T @ Q, np.eye(3), atol=1e-10)

    def test_span_preserved(self):
        M = np.random.default_rng(1).normal(size=(6, 3))
        Q = gram_schmidt(M)
        assert principal_angle(Q, M) < 1e-10

    def test_rank_deficient_replaced(self):
        M = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 0.0]])
        Q = gram_schmidt(M, rng=3)
        np.testing.assert_allclose(Q.T @ Q, np.eye(3), atol=1e-10)

    def test_too_many_columns(self):
        with pytest.raises(ValidationError):
            gram_schmidt(np.ones((2, 3)))


class TestApproxEigen:
    def test_diagonal(self):
        U = approx_eigen(np.diag([4.0, 1.0, 0.25]), 1, t=30, rng=0)
        assert principal_angle(U, np.eye(3)[:, :1]) < 1e-6

    def test_rank_two_residual(self):
        rng = np.random.default_rng(2)
        M = rng.normal(size=(10, 2)) @ rng.normal(size=(2, 15))
        U = approx_eigen(M, 2, t=50, rng=rng)
        assert np.linalg.norm(M - U @ (U.T @ M)) / np.linalg.norm(M) < 1e-8

    def test_one_iteration_beats_random(self):
        rng = np.random.default_rng(3)
        M = np.diag([10.0, 8.0, 1.0, 0.5, 0.2, 0.1]) @ rng.normal(size=(6, 20))
        exact = top_eigvecs(M, 2)
        random_angle = principal_angle(gram_schmidt(np.random.default_rng(5).normal(size=(6, 2))), exact)
        assert principal_angle(approx_eigen(M, 2, t=1, rng=5), exact) < random_angle

    def test_rejects_bad_arguments(self):
        M = np.eye(3)
        with pytest.raises(ValidationError):
            approx_eigen(M, 4)
        with pytest.raises(ValidationError):
            approx_eigen(M, 1, t=0)

    def test_seeded_determinism(self):
        M = np.random.default_rng(4).normal(size=(7, 9))
        np.testing.assert_array_equal(approx_eigen(M, 3, rng=11), approx_eigen(M, 3, rng=11))


class TestGenerateBasis:
    def test_single_block_completion(self):
        B = generate_basis(np.random.default_rng(0).normal(size=(5, 4)), [], rng=1)
        assert B.block_ranks == (4,)
        np.testing.assert_allclose(B.columns.T @ B.columns, np.eye(4), atol=1e-10)

    def test_recovers_plane(self):
        rng = np.random.default_rng(6)
        plane = np.linalg.qr(rng.normal(size=(5, 2)))[0]
        samples = rng.normal(size=(40, 2)) @ plane.T
        B = generate_basis(samples, [2], rng=rng)
        assert B.block_ranks == (2, 3)
        assert principal_angle(B.block(0), plane) < 1e-6

    def test_deflation(self):
        rng = np.random.default_rng(7)
        samples = rng.normal(size=(30, 6)) * np.array([5, 4, 1, 1, 0.5, 0.1])
        B = generate_basis(samples, [2], rng=rng)
        U1 = B.block(0)
        deflated = samples.T - U1 @ (U1.T @ samples.T)
        assert np.linalg.norm(U1.T @ deflated) < 1e-8

    def test_blocks_orthogonal_ill_conditioned(self):
        rng = np.random.default_rng(8)
        samples = rng.normal(size=(3, 10)) * np.logspace(0, -12, 10)
        B = generate_basis(samples, [2, 3, 2], rng=rng)
        np.testing.assert_allclose(B.columns.T @ B.columns, np.eye(10), atol=1e-10)
        assert B.block_ranks == (2, 3, 2, 3)

    def test_ranks_too_large(self):
        with pytest.raises(ValidationError):
            generate_basis(np.ones((3, 4)), [3, 2])

    def test_save_load(self, tmp_path):
        B = generate_basis(np.random.default_rng(9).normal(size=(20, 6)), [2, 1], rng=0)
        B.save(tmp_path / "b.csv")
        back = OrthoBasis.load(tmp_path / "b.csv")
        np.testing.assert_array_equal(back.columns, B.columns)
        assert back.block_ranks == B.block_ranks

    def test_basis_validation(self):
        with pytest.raises(ValidationError):
            OrthoBasis(np.ones((2, 2)), (2,))
        with pytest.raises(ValidationError):
            OrthoBasis(np.eye(3), (1, 1))


class TestStats:
    def test_single_sample(self):
        s = np.array([[3.0, 4.0]])
        (row,) = subspace_stats(s, OrthoBasis.identity(2))
        assert row["mean_l2"] == pytest.approx(5.0)
        assert row["std_l2"] == 0.0

    def test_chi_mean(self):
        s = np.random.default_rng(10).normal(size=(2000, 100))
        (row,) = subspace_stats(s, OrthoBasis.identity(100))
        assert row["mean_l2"] == pytest.approx(10.0, rel=0.05)

    def test_unused_block_zero(self):
        s = np.random.default_rng(11).normal(size=(10, 4)) * np.array([1, 1, 0, 0])
        stats = subspace_stats(s, OrthoBasis.identity(4, (2, 2)))
        assert stats[1]["mean_l2"] == 0.0
        assert stats[0]["power_fraction"] == pytest.approx(1.0)

    def test_empty(self):
        with pytest.raises(ValidationError):
            subspace_stats(np.zeros((0, 3)), OrthoBasis.identity(3))

    def test_complete_basis_keeps_columns(self):
        rng = np.random.default_rng(12)
        Q = np.linalg.qr(rng.normal(size=(5, 2)))[0]
        full = complete_basis(Q, 5, rng)
        np.testing.assert_allclose(full[:, :2], Q, atol=1e-12)
