"""Unit tests for the small dense linear algebra kernel."""

import numpy as np
import pytest

from hetstream import linalg
from hetstream.errors import DimensionMismatch, NotPositiveDefinite, SingularMatrix

from helpers import ar1_cov


class TestSolveSpd:
    def test_identity(self):
        x = linalg.solve_spd(np.eye(2), np.array([3.0, 4.0]))
        np.testing.assert_allclose(x, [3.0, 4.0])

    def test_hand_solve(self):
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        x = linalg.solve_spd(a, np.array([3.0, 3.0]))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-14)

    def test_rank_one_raises(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(SingularMatrix):
            linalg.solve_spd(a, np.array([1.0, 2.0]))

    def test_matrix_rhs(self):
        a = np.array([[4.0, 2.0], [2.0, 5.0]])
        b = np.eye(2)
        inv = linalg.solve_spd(a, b)
        np.testing.assert_allclose(a @ inv, np.eye(2), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            linalg.solve_spd(np.eye(2), np.ones(3))

    def test_residual_bound_random_spd(self):
        # property sweep: random G'G + eps*I over dims 1..12
        rng = np.random.default_rng(2024)
        for _ in range(200):
            dim = int(rng.integers(1, 13))
            g = rng.standard_normal((dim + 2, dim))
            a = g.T @ g + 1e-6 * np.eye(dim)
            b = rng.standard_normal(dim)
            x = linalg.solve_spd(a, b)
            bound = 1e-10 * (
                np.linalg.norm(a) * np.linalg.norm(x) + np.linalg.norm(b)
            )
            assert np.linalg.norm(a @ x - b) <= bound


class TestCholesky:
    def test_identity(self):
        np.testing.assert_allclose(linalg.cholesky(np.eye(3)), np.eye(3))

    def test_hand_factorization(self):
        a = np.array([[4.0, 2.0], [2.0, 5.0]])
        np.testing.assert_allclose(
            linalg.cholesky(a), np.array([[2.0, 0.0], [1.0, 2.0]]), atol=1e-14
        )

    def test_ar1_reconstruction(self):
        a = ar1_cov(7)
        lower = linalg.cholesky(a)
        err = np.linalg.norm(lower @ lower.T - a) / np.linalg.norm(a)
        assert err <= 1e-10

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            linalg.cholesky(np.array([[1.0, 1.0], [1.0, 1.0]]))
        with pytest.raises(NotPositiveDefinite):
            linalg.cholesky(-np.eye(2))

    def test_random_spd_sweep(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            dim = int(rng.integers(1, 13))
            g = rng.standard_normal((dim + 3, dim))
            a = g.T @ g + 1e-8 * np.eye(dim)
            lower = linalg.cholesky(a)
            assert np.allclose(lower, np.tril(lower))
            err = np.linalg.norm(lower @ lower.T - a) / max(np.linalg.norm(a), 1e-12)
            assert err <= 1e-10


class TestQuadForm:
    def test_identity(self):
        assert linalg.quad_form(np.eye(2), np.array([3.0, 4.0])) == pytest.approx(25.0)

    def test_scaled_identity(self):
        a = np.array([[2.0, 0.0], [0.0, 2.0]])
        assert linalg.quad_form(a, np.array([1.0, 1.0])) == pytest.approx(4.0)

    def test_double_sum_oracle(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((5, 5))
        a = 0.5 * (a + a.T)
        v = rng.standard_normal(5)
        direct = sum(
            v[i] * a[i, j] * v[j] for i in range(5) for j in range(5)
        )
        assert abs(linalg.quad_form(a, v) - direct) <= 1e-12 * max(abs(direct), 1.0)

    def test_nonnegative_on_spd(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            dim = int(rng.integers(1, 8))
            g = rng.standard_normal((dim + 2, dim))
            a = g.T @ g + 1e-9 * np.eye(dim)
            v = rng.standard_normal(dim)
            assert linalg.quad_form(a, v) >= 0.0
            scale = np.linalg.norm(a)
            assert linalg.quad_form(a, np.zeros(dim)) <= 1e-12 * max(scale, 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            linalg.quad_form(np.eye(3), np.ones(2))


class TestSolveGeneral:
    def test_asymmetric_solve(self):
        a = np.array([[2.0, 1.0], [0.5, 3.0]])
        b = np.array([1.0, 2.0])
        np.testing.assert_allclose(a @ linalg.solve_general(a, b), b, atol=1e-12)

    def test_singular_raises(self):
        a = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularMatrix):
            linalg.solve_general(a, np.ones(2))


class TestSolveConsistent:
    def test_falls_back_to_least_squares(self):
        # rank-1 but consistent: b in range(a)
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        b = np.array([2.0, 2.0])
        x = linalg.solve_consistent(a, b)
        np.testing.assert_allclose(a @ x, b, atol=1e-10)
