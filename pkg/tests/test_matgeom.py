import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from priormc.matgeom import (EmptyComplementError, InvalidInputError, SubspaceBasis,
                             SupportProjector, complete_orthobasis, nuclear_norm, power_norm,
                             principal_angles, project_T, project_T_perp, svd, truncate_rank)
from helpers import rand_basis

seeds = st.integers(0, 2 ** 32 - 1)


def test_svd_identity_and_diagonal():
    f = svd(np.eye(3))
    np.testing.assert_allclose(f.sigma, [1, 1, 1])
    np.testing.assert_allclose(np.abs(f.U.basis), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(svd(np.diag([1.0, 3.0])).sigma, [3, 1])


def test_svd_reconstruction_and_signs():
    A = np.random.default_rng(0).standard_normal((6, 6))
    f = svd(A)
    assert np.linalg.norm(A - f.reconstruct()) <= 1e-8 * np.linalg.norm(A)
    assert np.all(np.diff(f.sigma) <= 0)
    # first clearly nonzero entry of every left vector is positive
    U = f.U.basis
    for k in range(U.shape[1]):
        first = U[np.argmax(np.abs(U[:, k]) > 1e-12), k]
        assert first > 0
    # deterministic: -A gives the same left vectors and flipped right ones
    g = svd(-A)
    np.testing.assert_allclose(g.U.basis, U, atol=1e-10)


def test_svd_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        svd(np.array([[1.0, np.nan], [0.0, 1.0]]))


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_singular_values_orthogonally_invariant(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((5, 5))
    P, Q = rand_basis(rng, 5, 5), rand_basis(rng, 5, 5)
    np.testing.assert_allclose(svd(P @ A @ Q).sigma, svd(A).sigma, atol=1e-8)


def test_truncate_rank_examples():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 6))
    Mr, tail = truncate_rank(A, 2)
    assert np.linalg.norm(tail) <= 1e-8
    Mr, tail = truncate_rank(np.diag([3.0, 2.0, 1.0]), 1)
    np.testing.assert_allclose(Mr, np.diag([3.0, 0, 0]), atol=1e-12)
    B = rng.standard_normal((8, 8))
    Mr, tail = truncate_rank(B, 3)
    s = np.linalg.svd(B, compute_uv=False)
    assert abs(nuclear_norm(tail) - s[3:].sum()) <= 1e-10
    assert np.linalg.norm(Mr + tail - B) <= 1e-12
    assert np.linalg.norm(tail, 2) <= s[3] + 1e-8
    with pytest.raises(InvalidInputError):
        truncate_rank(B, 0)
    with pytest.raises(InvalidInputError):
        truncate_rank(B, 9)


def test_truncate_rank_eckart_young_spot_check():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((7, 7))
    _, tail = truncate_rank(A, 2)
    best = np.linalg.norm(tail)
    for _ in range(100):
        B = rng.standard_normal((7, 2)) @ rng.standard_normal((2, 7))
        assert best <= np.linalg.norm(A - B)


def test_principal_angles_examples():
    e = np.eye(4)
    assert principal_angles(e[:, :1], e[:, 1:2]) == pytest.approx([np.pi / 2])
    d = ((e[:, 0] + e[:, 1]) / np.sqrt(2))[:, None]
    assert principal_angles(e[:, :1], d) == pytest.approx([np.pi / 4])
    rng = np.random.default_rng(3)
    U = rand_basis(rng, 6, 3)
    Rot = rand_basis(rng, 3, 3)
    assert np.max(principal_angles(U, U @ Rot)) <= 1e-7
    with pytest.raises(InvalidInputError):
        principal_angles(U, rand_basis(rng, 5, 2))


def test_principal_angles_small_angle_accuracy():
    # arccos of a cosine loses about half the digits here; the sine route does not
    t = 1e-9
    a = np.array([[1.0], [0.0], [0.0]])
    b = np.array([[np.cos(t)], [np.sin(t)], [0.0]])
    assert principal_angles(a, b)[0] == pytest.approx(t, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 4), st.integers(1, 4))
def test_principal_angles_match_scipy_and_are_symmetric(seed, d1, d2):
    rng = np.random.default_rng(seed)
    A, B = rand_basis(rng, 9, d1), rand_basis(rng, 9, d2)
    ours = principal_angles(A, B)
    ref = np.sort(sla.subspace_angles(A, B))[::-1]
    np.testing.assert_allclose(ours, ref, atol=1e-8)
    np.testing.assert_allclose(ours, principal_angles(B, A), atol=1e-8)
    assert np.all(np.diff(ours) <= 0)
    assert np.all((ours >= 0) & (ours <= np.pi / 2))


def test_subspace_basis_validation():
    with pytest.raises(InvalidInputError):
        SubspaceBasis(np.ones((3, 2)))
    with pytest.raises(InvalidInputError):
        SubspaceBasis(np.eye(3)[:, :2] * 1.1)
    b = SubspaceBasis.from_columns(np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0]]))
    assert b.subspace_dim == 1 and b.ambient_dim == 3


def test_project_T_examples_and_pythagoras():
    rng = np.random.default_rng(4)
    U, V = rand_basis(rng, 8, 2), rand_basis(rng, 8, 2)
    T = SupportProjector(U, V)
    Z = U @ rng.standard_normal((2, 2)) @ V.T
    np.testing.assert_allclose(project_T(Z, T), Z, atol=1e-12)
    Cu = complete_orthobasis(SubspaceBasis(U)).basis
    Cv = complete_orthobasis(SubspaceBasis(V)).basis
    Zp = Cu @ rng.standard_normal((6, 6)) @ Cv.T
    assert np.linalg.norm(project_T(Zp, T)) <= 1e-12
    Z = rng.standard_normal((8, 8))
    P = project_T(Z, T)
    assert np.linalg.norm(project_T(P, T) - P) <= 1e-10
    np.testing.assert_allclose(project_T_perp(Z, T), Z - P, atol=1e-12)
    lhs = np.linalg.norm(Z) ** 2
    rhs = np.linalg.norm(P) ** 2 + np.linalg.norm(project_T_perp(Z, T)) ** 2
    assert abs(lhs - rhs) <= 1e-8 * lhs
    with pytest.raises(InvalidInputError):
        project_T(np.zeros((7, 7)), T)
    with pytest.raises(InvalidInputError):
        SupportProjector(U, rand_basis(rng, 8, 3))


def test_complete_orthobasis():
    e = np.eye(2)
    C = complete_orthobasis(SubspaceBasis(e[:, :1])).basis
    np.testing.assert_allclose(np.abs(C), e[:, 1:], atol=1e-12)
    A = rand_basis(np.random.default_rng(5), 7, 3)
    C = complete_orthobasis(SubspaceBasis(A)).basis
    assert C.shape == (7, 4)
    F = np.hstack([A, C])
    assert np.linalg.norm(F.T @ F - np.eye(7)) <= 1e-9
    with pytest.raises(EmptyComplementError):
        complete_orthobasis(SubspaceBasis(np.eye(3)))


def test_power_norm_matches_dense_operator_norm():
    rng = np.random.default_rng(6)
    S = rng.standard_normal((16, 16))
    S = S + S.T
    apply = lambda Z: (S @ Z.ravel()).reshape(4, 4)
    res = power_norm(apply, rng.standard_normal((4, 4)), tol=1e-12, max_iter=5000)
    assert res.converged
    assert res.value == pytest.approx(np.abs(np.linalg.eigvalsh(S)).max(), rel=1e-5)
