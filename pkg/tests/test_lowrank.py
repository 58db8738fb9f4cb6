import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lrbug.lowrank import (MAX_DENSE_ENTRIES, DenseSizeError, FactoredMatrix, inner, norm, rank_of,
                           round_factors, round_sum, to_dense, truncated_svd)

from conftest import random_factored


def assert_invariants(X: FactoredMatrix, tol=1e-12):
    r = X.rank
    assert np.linalg.norm(X.U.T @ X.U - np.eye(r)) <= tol * max(1, r)
    assert np.linalg.norm(X.V.T @ X.V - np.eye(r)) <= tol * max(1, r)
    assert np.all(X.s >= 0)
    assert np.all(np.diff(X.s) <= 0)
    assert r <= min(X.shape)


def matrix_with_singular_values(rng, m1, m2, sv):
    U, _ = np.linalg.qr(rng.standard_normal((m1, m1)))
    V, _ = np.linalg.qr(rng.standard_normal((m2, m2)))
    S = np.zeros((m1, m2))
    S[: len(sv), : len(sv)] = np.diag(sv)
    return U @ S @ V.T


class TestTruncatedSvd:
    def test_zero_matrix_has_rank_zero(self):
        X = truncated_svd(np.zeros((5, 4)), 1e-8)
        assert X.rank == 0 and X.shape == (5, 4)

    def test_small_tail_dropped(self):
        X = truncated_svd(np.diag([3.0, 2.0, 1e-9]), 1e-6)
        assert X.rank == 2
        np.testing.assert_allclose(X.s, [3.0, 2.0])

    def test_known_spectrum_rank(self, rng):
        A = matrix_with_singular_values(rng, 8, 6, [5, 1, 0.1, 0.01, 0, 0])
        X = truncated_svd(A, 0.05)
        # full SVD oracle: tails are 0.1005 after rank 2 and 0.01 after rank 3
        s = np.linalg.svd(A, compute_uv=False)
        assert np.sqrt(np.sum(s[3:] ** 2)) <= 0.05 < np.sqrt(np.sum(s[2:] ** 2))
        assert X.rank == 3
        assert np.linalg.norm(A - X.to_dense()) <= 0.05

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            truncated_svd(np.array([[1.0, np.nan], [0.0, 1.0]]), 0.0)

    def test_rejects_negative_eps(self):
        with pytest.raises(ValueError):
            truncated_svd(np.eye(2), -1.0)

    def test_relative_mode(self):
        A = np.diag([10.0, 1.0, 0.01])
        assert truncated_svd(A, 0.005, relative=True).rank == 2
        assert truncated_svd(A, 0.005).rank == 3

    @given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31 - 1))
    def test_exact_round_trip(self, m1, m2, seed):
        A = np.random.default_rng(seed).standard_normal((m1, m2))
        X = truncated_svd(A, 0.0)
        assert_invariants(X)
        assert np.linalg.norm(A - X.to_dense()) <= 1e-12 * max(1.0, np.linalg.norm(A))

    @given(st.floats(0, 3), st.integers(0, 2**31 - 1))
    def test_tail_bound_and_minimality(self, eps, seed):
        A = np.random.default_rng(seed).standard_normal((7, 5))
        X = truncated_svd(A, eps)
        s = np.linalg.svd(A, compute_uv=False)
        assert np.linalg.norm(A - X.to_dense()) <= eps + 1e-12
        if X.rank > 0:
            assert np.sqrt(np.sum(s[X.rank - 1:] ** 2)) > eps


class TestRoundSum:
    def test_single_term_identity(self, rng):
        X = random_factored(rng, 10, 8, 3)
        Y = round_sum([(1.0, X)], 0.0)
        np.testing.assert_allclose(Y.to_dense(), X.to_dense(), atol=1e-12)

    def test_cancellation(self, rng):
        X = random_factored(rng, 10, 8, 3)
        assert round_sum([(1.0, X), (-1.0, X)], 1e-12).rank == 0

    def test_bare_terms_have_weight_one(self, rng):
        X = random_factored(rng, 6, 6, 2)
        np.testing.assert_allclose(round_sum([X, X], 0.0).to_dense(), 2 * X.to_dense(), atol=1e-12)

    def test_matches_dense_oracle(self, rng):
        terms = [(w, random_factored(rng, 16, 16, 2)) for w in (1.0, -0.7, 0.3)]
        dense = sum(w * t.to_dense() for w, t in terms)
        oracle = truncated_svd(dense, 1e-3)
        Y = round_sum(terms, 1e-3)
        assert Y.rank == oracle.rank
        assert np.linalg.norm(Y.to_dense() - oracle.to_dense()) <= 2e-3

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            round_sum([random_factored(rng, 4, 5, 1), random_factored(rng, 5, 4, 1)], 0.0)

    def test_empty_list(self):
        with pytest.raises(ValueError):
            round_sum([], 0.0)

    def test_all_zero_terms(self):
        Z = FactoredMatrix.zeros((4, 3))
        assert round_sum([Z, (2.0, Z)], 0.0).rank == 0

    def test_reconstruction_identity_with_general_factors(self, rng):
        # non-orthonormal factors and signed cores: the un-truncated result must be exact
        parts = [(rng.standard_normal((9, 3)), rng.standard_normal(3), rng.standard_normal((7, 3)))
                 for _ in range(3)]
        dense = sum((L * c) @ R.T for L, c, R in parts)
        Y = round_factors(parts, 0.0, (9, 7))
        assert np.linalg.norm(Y.to_dense() - dense) <= 1e-10 * np.linalg.norm(dense)
        assert_invariants(Y)

    @given(st.lists(st.tuples(st.floats(-3, 3), st.integers(1, 4)), min_size=1, max_size=5),
           st.floats(0, 1), st.integers(0, 2**31 - 1))
    def test_error_bound_and_invariants(self, spec, eps, seed):
        rng = np.random.default_rng(seed)
        terms = [(w, random_factored(rng, 12, 9, r)) for w, r in spec]
        dense = sum(w * t.to_dense() for w, t in terms)
        Y = round_sum(terms, eps)
        assert_invariants(Y, tol=1e-11)
        assert np.linalg.norm(dense - Y.to_dense()) <= eps + 1e-10 * max(1.0, np.linalg.norm(dense))


class TestInnerAndNorm:
    def test_self_inner_is_core_energy(self, rng):
        X = random_factored(rng, 9, 7, 3)
        assert inner(X, X) == pytest.approx(np.sum(X.s**2), rel=1e-13)

    def test_inner_with_zero(self, rng):
        assert inner(random_factored(rng, 5, 5, 2), FactoredMatrix.zeros((5, 5))) == 0.0

    def test_inner_matches_dense(self, rng):
        X, Y = random_factored(rng, 12, 10, 3), random_factored(rng, 12, 10, 3)
        assert inner(X, Y) == pytest.approx(np.sum(X.to_dense() * Y.to_dense()), rel=1e-12)

    def test_inner_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            inner(random_factored(rng, 4, 5, 1), random_factored(rng, 5, 4, 1))

    def test_norm_examples(self, rng):
        assert norm(FactoredMatrix.zeros((3, 3))) == 0.0
        X = FactoredMatrix(np.eye(3)[:, :2], np.array([4.0, 3.0]), np.eye(3)[:, :2])
        assert norm(X) == pytest.approx(5.0)
        Y = random_factored(rng, 11, 6, 4)
        assert norm(Y) == pytest.approx(np.linalg.norm(Y.to_dense()), rel=1e-13)

    @given(st.integers(0, 2**31 - 1), st.floats(-2, 2), st.floats(-2, 2))
    def test_bilinear_symmetric_cauchy_schwarz(self, seed, a, b):
        rng = np.random.default_rng(seed)
        X, Y, Z = (random_factored(rng, 8, 6, r) for r in (1, 2, 3))
        assert inner(X, Y) == pytest.approx(inner(Y, X), abs=1e-12)
        lhs = inner(round_sum([(a, X), (b, Y)], 0.0), Z)
        assert lhs == pytest.approx(a * inner(X, Z) + b * inner(Y, Z), abs=1e-10)
        assert abs(inner(X, Y)) <= norm(X) * norm(Y) + 1e-12


class TestDense:
    def test_zero_to_dense(self):
        np.testing.assert_array_equal(FactoredMatrix.zeros((3, 2)).to_dense(), np.zeros((3, 2)))

    def test_rank_one_outer_product(self):
        X = FactoredMatrix(np.eye(3)[:, :1], np.array([2.0]), np.eye(4)[:, :1])
        expected = np.zeros((3, 4))
        expected[0, 0] = 2.0
        np.testing.assert_array_equal(to_dense(X), expected)

    def test_cap(self):
        m = int(np.sqrt(MAX_DENSE_ENTRIES)) + 1
        X = FactoredMatrix(np.zeros((m, 1)), np.ones(1), np.zeros((m, 1)))
        with pytest.raises(DenseSizeError):
            to_dense(X)

    def test_rank_of(self):
        assert rank_of(np.outer([1, 2, 3], [1, 1]), 1e-12) == 1
        assert rank_of(np.zeros((3, 3)), 0.0) == 0


class TestFactoredMatrix:
    def test_scaled_negative_keeps_core_nonnegative(self, rng):
        X = random_factored(rng, 5, 4, 2)
        Y = X.scaled(-2.0)
        assert np.all(Y.s >= 0)
        np.testing.assert_allclose(Y.to_dense(), -2 * X.to_dense(), atol=1e-14)
        assert X.scaled(0.0).rank == 0

    def test_transpose(self, rng):
        X = random_factored(rng, 5, 4, 2)
        np.testing.assert_allclose(X.transpose().to_dense(), X.to_dense().T)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            FactoredMatrix(np.zeros((3, 2)), np.zeros(1), np.zeros((3, 2)))
