import numpy as np
import pytest

from capgp.utils import linalg
from capgp.utils.errors import DimensionMismatch, NotPositiveDefinite, SingularTriangular

A22 = np.array([[4.0, 2.0], [2.0, 3.0]])
L22 = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])


def _random_pd(rng, n):
    B = rng.normal(size=(n, n))
    return B @ B.T + n * np.eye(n)


def test_cholesky_identity():
    f = linalg.cholesky(np.eye(3))
    np.testing.assert_allclose(f.L, np.eye(3))
    assert f.jitter == 0.0


def test_cholesky_2x2():
    f = linalg.cholesky(A22)
    np.testing.assert_allclose(f.L, L22, atol=1e-14)
    np.testing.assert_allclose(f.L @ f.L.T, A22, atol=1e-14)


def test_cholesky_indefinite():
    with pytest.raises(NotPositiveDefinite):
        linalg.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_cholesky_non_finite():
    with pytest.raises(NotPositiveDefinite):
        linalg.cholesky(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_jittered_on_pd_input_matches_cholesky():
    f = linalg.cholesky_jittered(A22)
    assert f.jitter == 0.0
    np.testing.assert_array_equal(f.L, linalg.cholesky(A22).L)


def test_jittered_rank_one():
    A = np.ones((2, 2))
    f = linalg.cholesky_jittered(A)
    assert f.jitter > 0
    target = A + f.jitter * np.eye(2)
    assert np.linalg.norm(f.L @ f.L.T - target) / np.linalg.norm(target) < 1e-10


def test_jittered_zero_matrix_uses_floor():
    f = linalg.cholesky_jittered(np.zeros((2, 2)))
    assert f.jitter == linalg.JITTER_FLOOR
    assert np.all(np.diag(f.L) > 0)


def test_jittered_gives_up():
    with pytest.raises(NotPositiveDefinite):
        linalg.cholesky_jittered(np.array([[1.0, 2.0], [2.0, 1.0]]), max_attempts=3)


def test_jittered_needs_an_attempt():
    with pytest.raises(ValueError):
        linalg.cholesky_jittered(np.eye(2), max_attempts=0)


def test_sym_matrix_symmetrizes():
    S = linalg.SymMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    np.testing.assert_array_equal(S.entries, [[1.0, 1.0], [1.0, 1.0]])
    assert S.n == 2
    with pytest.raises(ValueError):
        S.entries[0, 0] = 5.0


@pytest.mark.parametrize("shape", [(2, 3), (0, 0), (3,)])
def test_sym_matrix_rejects_bad_shapes(shape):
    with pytest.raises(DimensionMismatch):
        linalg.SymMatrix(np.zeros(shape))


def test_solve_lower_examples():
    b = np.array([3.0, -1.0])
    np.testing.assert_array_equal(linalg.solve_lower(np.eye(2), b), b)
    x = linalg.solve_lower(L22, np.array([2.0, 1.0 + np.sqrt(2.0)]))
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-14)


def test_solve_lower_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        linalg.solve_lower(L22, np.ones(3))


def test_solve_upper_recovers_inverse():
    b = np.array([1.0, 2.0])
    y = linalg.solve_lower(L22, b)
    x = linalg.solve_upper(L22.T, y)
    inv = np.array([[3.0, -2.0], [-2.0, 4.0]]) / 8.0
    np.testing.assert_allclose(x, inv @ b, atol=1e-14)
    np.testing.assert_array_equal(linalg.solve_upper(np.eye(2), b), b)


def test_solve_upper_singular():
    with pytest.raises(SingularTriangular):
        linalg.solve_upper(np.array([[1.0, 1.0], [0.0, 0.0]]), np.ones(2))


def test_log_det_examples():
    assert linalg.log_det_from_factor(linalg.cholesky(np.eye(4))) == 0.0
    assert linalg.log_det_from_factor(linalg.cholesky(A22)) == pytest.approx(np.log(8.0), abs=1e-12)
    e2 = np.exp(2.0)
    assert linalg.log_det_from_factor(linalg.cholesky(np.diag([e2, e2]))) == pytest.approx(4.0, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 5, 10, 20])
def test_reconstruction(rng, n):
    A = _random_pd(rng, n)
    f = linalg.cholesky(A)
    assert np.linalg.norm(f.L @ f.L.T - A) / np.linalg.norm(A) < 1e-10
    assert np.allclose(f.L, np.tril(f.L))


@pytest.mark.parametrize("n", [1, 3, 5])
def test_log_det_matches_eigenvalues(rng, n):
    A = _random_pd(rng, n)
    expected = np.sum(np.log(np.linalg.eigvalsh(A)))
    assert linalg.log_det_from_factor(linalg.cholesky(A)) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("n", [2, 6, 10])
def test_cho_solve_matches_dense_solve(rng, n):
    A = _random_pd(rng, n)
    b = rng.normal(size=n)
    x = linalg.cho_solve(linalg.cholesky(A), b)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-8)
