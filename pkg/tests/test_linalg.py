import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_psd
from tunedreg import linalg
from tunedreg.exceptions import InvalidInputError


def penrose_residuals(A, P):
    s = max(np.linalg.norm(A), 1.0)
    sp = max(np.linalg.norm(P), 1.0)
    return (
        np.linalg.norm(A @ P @ A - A) / s,
        np.linalg.norm(P @ A @ P - P) / sp,
        np.linalg.norm((A @ P).T - A @ P),
        np.linalg.norm((P @ A).T - P @ A),
    )


def test_pinv_identity():
    np.testing.assert_array_equal(linalg.pseudo_inverse(np.eye(2)), np.eye(2))


def test_pinv_rank_deficient_diagonal():
    np.testing.assert_allclose(linalg.pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))


def test_pinv_zero_matrix():
    np.testing.assert_array_equal(linalg.pseudo_inverse(np.zeros((3, 3))), np.zeros((3, 3)))


def test_pinv_rank2_penrose():
    rng = np.random.default_rng(0)
    A = random_psd(rng, 4, rank=2)
    P = linalg.pseudo_inverse(A)
    assert max(penrose_residuals(A, P)) < 1e-9
    assert np.linalg.matrix_rank(P) == 2


def test_pinv_is_symmetric():
    rng = np.random.default_rng(1)
    A = random_psd(rng, 6, rank=3)
    P = linalg.pseudo_inverse(A)
    np.testing.assert_array_equal(P, P.T)


@pytest.mark.parametrize("alpha", [1e-3, 1.0, 1e3])
def test_pinv_scaling(alpha):
    rng = np.random.default_rng(2)
    A = random_psd(rng, 5, rank=3)
    np.testing.assert_allclose(
        linalg.pseudo_inverse(alpha * A), linalg.pseudo_inverse(A) / alpha, rtol=1e-10, atol=1e-12 / alpha
    )


def test_pinv_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        linalg.pseudo_inverse(np.array([[np.nan, 0], [0, 1.0]]))


def test_as_psd_rejects_indefinite_and_asymmetric():
    with pytest.raises(InvalidInputError):
        linalg.as_psd(np.diag([1.0, -1.0]))
    with pytest.raises(InvalidInputError):
        linalg.as_psd(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        linalg.as_psd(np.ones((2, 3)))


def test_as_psd_accepts_rounding():
    A = np.diag([1.0, -1e-13])
    B = linalg.as_psd(A)
    assert B.shape == (2, 2)
    np.testing.assert_allclose(linalg.pseudo_inverse(B), np.diag([1.0, 0.0]))


def test_spectral_factor_reconstructs():
    rng = np.random.default_rng(3)
    A = random_psd(rng, 6, rank=4)
    F = linalg.spectral_factor(A)
    assert F.rank == 4
    np.testing.assert_allclose(F.basis.T @ F.basis, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(F.reconstruct(), A, atol=1e-10 * np.abs(A).max())
    L = F.sqrt()
    np.testing.assert_allclose(L @ L.T, A, atol=1e-10 * np.abs(A).max())


def test_in_range_examples():
    A = np.diag([1.0, 0.0])
    assert linalg.in_range(np.array([1.0, 0.0]), A)
    assert not linalg.in_range(np.array([0.0, 1.0]), A)
    assert linalg.in_range(np.zeros(2), A)


def test_in_range_constructed():
    rng = np.random.default_rng(4)
    for _ in range(20):
        A = random_psd(rng, 7, rank=int(rng.integers(1, 7)))
        assert linalg.in_range(A @ rng.standard_normal(7), A)


def test_in_range_null_component_detected():
    rng = np.random.default_rng(5)
    A = random_psd(rng, 6, rank=3)
    F = linalg.spectral_factor(A)
    null = np.linalg.svd(F.basis.T)[2][3:].T
    v = A @ rng.standard_normal(6) + 1e-3 * null[:, 0] * np.linalg.norm(A)
    assert not linalg.in_range(v, A)


def test_in_range_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        linalg.in_range(np.ones(3), np.eye(2))


def test_weighted_sq_norm_examples():
    assert linalg.weighted_sq_norm(np.array([3.0, 4.0]), np.eye(2)) == 25.0
    assert linalg.weighted_sq_norm(np.array([3.0, 4.0]), np.zeros((2, 2))) == 0.0
    # scalar expansion: 2*1*1 + 2*1*(-1)*1 + 2*1*1 = 2
    assert linalg.weighted_sq_norm(np.array([1.0, -1.0]), np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(2.0)


def test_weighted_sq_norm_clamps():
    W = np.array([[1.0, 1.0], [1.0, 1.0]])
    x = np.array([1.0, -1.0 + 1e-17])
    assert linalg.weighted_sq_norm(x, W) >= 0.0


@st.composite
def psd_and_vector(draw):
    m = draw(st.integers(1, 6))
    r = draw(st.integers(0, m))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return random_psd(rng, m, rank=r), rng.standard_normal(m)


@settings(max_examples=60, deadline=None)
@given(psd_and_vector())
def test_property_penrose_and_range(data):
    A, v = data
    P = linalg.pseudo_inverse(A)
    assert max(penrose_residuals(A, P)) < 1e-8
    assert linalg.in_range(A @ v, A)


@settings(max_examples=60, deadline=None)
@given(psd_and_vector())
def test_property_zero_norm_in_range_implies_zero(data):
    A, v = data
    x = A @ v
    if linalg.weighted_sq_norm(x, A) <= 1e-24 * max(np.abs(A).max(), 1.0) ** 3:
        np.testing.assert_allclose(x, 0.0, atol=1e-9)
    # and a nonzero vector in range has positive weighted norm
    if np.linalg.norm(x) > 1e-6:
        assert linalg.weighted_sq_norm(x, A) > 0
