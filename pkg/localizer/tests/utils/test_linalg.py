"""
Tests for utils/linalg.py
"""

import numpy as np
import pytest

from exceptions import ModelValidationError
from utils.linalg import (
    ensure_finite,
    max_column_sum_norm,
    max_row_sum_norm,
    numerical_rank,
    orthogonal_projector_complement,
    pinv,
    rank_tolerance,
    spectral_norm,
)


class TestEnsureFinite:
    """Tests for ensure_finite."""

    def test_accepts_finite(self):
        arr = ensure_finite("A", [[1, 2], [3, 4]])
        assert arr.dtype == float

    def test_rejects_nan(self):
        with pytest.raises(ModelValidationError) as exc_info:
            ensure_finite("B", np.array([[1.0, np.nan]]))
        assert exc_info.value.details["name"] == "B"

    def test_rejects_inf(self):
        with pytest.raises(ModelValidationError):
            ensure_finite("C", np.array([np.inf]))


class TestRank:
    """Tests for rank_tolerance and numerical_rank."""

    def test_default_tolerance_rule(self):
        tol = rank_tolerance((10, 4), 2.0)
        assert tol == pytest.approx(10 * np.finfo(float).eps * 2.0)

    def test_explicit_tolerance_wins(self):
        assert rank_tolerance((3, 3), 1.0, rank_tol=0.5) == 0.5

    def test_rank_of_outer_product(self):
        mat = np.outer([1.0, 2.0, 3.0], [4.0, 5.0])
        assert numerical_rank(mat) == 1

    def test_rank_of_identity(self):
        assert numerical_rank(np.eye(5)) == 5

    def test_rank_of_empty(self):
        assert numerical_rank(np.zeros((0, 3))) == 0

    def test_rank_of_zero_matrix(self):
        assert numerical_rank(np.zeros((3, 3))) == 0


class TestPinv:
    """Tests for the SVD pseudoinverse."""

    def test_penrose_identities(self):
        rng = np.random.default_rng(0)
        mat = rng.normal(size=(6, 3)) @ rng.normal(size=(3, 5))  # rank 3
        inv = pinv(mat)

        assert inv.shape == (5, 6)
        np.testing.assert_allclose(mat @ inv @ mat, mat, atol=1e-10)
        np.testing.assert_allclose(inv @ mat @ inv, inv, atol=1e-10)
        np.testing.assert_allclose((mat @ inv).T, mat @ inv, atol=1e-10)
        np.testing.assert_allclose((inv @ mat).T, inv @ mat, atol=1e-10)

    def test_matches_inverse_for_square(self):
        mat = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(pinv(mat), np.linalg.inv(mat), atol=1e-12)

    def test_zero_matrix(self):
        np.testing.assert_array_equal(pinv(np.zeros((2, 3))), np.zeros((3, 2)))

    def test_empty_matrix(self):
        assert pinv(np.zeros((4, 0))).shape == (0, 4)

    def test_complex_matrix(self):
        mat = np.array([[1.0 + 1.0j, 0.0], [0.0, 2.0j]])
        np.testing.assert_allclose(pinv(mat) @ mat, np.eye(2), atol=1e-12)


class TestNorms:
    """Tests for the induced norms."""

    def test_spectral_norm(self):
        assert spectral_norm(np.diag([3.0, -5.0, 1.0])) == pytest.approx(5.0)

    def test_spectral_norm_empty(self):
        assert spectral_norm(np.zeros((0, 0))) == 0.0

    def test_row_and_column_sums(self):
        mat = np.array([[1.0, -2.0], [3.0, 4.0]])
        assert max_row_sum_norm(mat) == 7.0
        assert max_column_sum_norm(mat) == 6.0


class TestProjector:
    """Tests for orthogonal_projector_complement."""

    def test_annihilates_range(self):
        mat = np.array([[1.0], [1.0], [0.0]])
        proj = orthogonal_projector_complement(mat)

        np.testing.assert_allclose(proj @ mat, 0.0, atol=1e-12)
        np.testing.assert_allclose(proj @ proj, proj, atol=1e-12)
        np.testing.assert_allclose(proj, proj.T)

    def test_empty_gives_identity(self):
        np.testing.assert_array_equal(orthogonal_projector_complement(np.zeros((3, 0))), np.eye(3))
