import numpy as np
import pytest

from priormc.matgeom import InvalidInputError, nuclear_norm
from priormc.prior import (LeverageProfile, canonical_decomposition, leverage_scores,
                           make_weight)
from priormc.sampling import (SamplingMask, apply_Pp, apply_Rp, gaussian_ensemble, gaussian_measure,
                              uniform_mask)
from priormc.solvers import (SUCCESS_TOL, SolverConfig, UnderdeterminedError, baseline_diagonal,
                             baseline_rnnh, baseline_wls, diagonal_weights, iterative_reweighted,
                             optimality_gap, perfect_prior_least_squares, rnnh_weights,
                             solve_standard_completion, solve_standard_recovery,
                             solve_weighted, solve_weighted_completion,
                             solve_weighted_recovery, svt)
from priormc.theory import PriorQuality, constants, nullspace_audit
from helpers import rand_basis, tilted


def low_rank(rng, n, r):
    U, V = rand_basis(rng, n, r), rand_basis(rng, n, r)
    M = U @ np.diag(rng.uniform(0.5, 1.5, r)) @ V.T
    return M / np.linalg.norm(M), U, V


def test_svt_examples():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((5, 4))
    np.testing.assert_allclose(svt(Z, 0.0), Z, atol=1e-12)
    assert not svt(Z, np.linalg.norm(Z, 2) + 1e-9).any()
    u, v = rand_basis(rng, 5, 1), rand_basis(rng, 4, 1)
    np.testing.assert_allclose(svt(5 * u @ v.T, 2.0), 3 * u @ v.T, atol=1e-12)
    with pytest.raises(InvalidInputError):
        svt(Z, -1.0)


def test_solver_config_validation():
    for bad in ({"max_iters": 0}, {"abs_tol": 0.0}, {"penalty": -1.0}, {"noise_level": -0.1}):
        with pytest.raises(InvalidInputError):
            SolverConfig(**bad)


def test_full_observation_is_exact():
    rng = np.random.default_rng(1)
    M, U, V = low_rank(rng, 10, 2)
    mask = uniform_mask(10, 1.0, 0)
    Y = apply_Rp(M, mask)
    QU, QV = make_weight(tilted(rng, U, 0.1), 0.3), make_weight(tilted(rng, V, 0.1), 0.3)
    for res in (solve_standard_completion(Y, mask, truth=M),
                solve_weighted_completion(Y, mask, QU, QV, truth=M),
                baseline_diagonal(Y, mask, LeverageProfile.uniform(10, 2), truth=M),
                baseline_wls(Y, mask, M + 0.01, truth=M),
                baseline_rnnh(Y, mask, M, 0.1, truth=M),
                perfect_prior_least_squares(Y, mask, U, V, truth=M)):
        assert res.relative_error <= 1e-6


def test_standard_completion_regimes():
    rng = np.random.default_rng(2)
    n = 12
    u = np.ones((n, 1)) / np.sqrt(n) + 0.05 * rng.standard_normal((n, 1))
    v = np.ones((n, 1)) / np.sqrt(n) + 0.05 * rng.standard_normal((n, 1))
    M = u @ v.T
    M /= np.linalg.norm(M)
    mask = uniform_mask(n, 0.8, 3)
    res = solve_standard_completion(apply_Rp(M, mask), mask, truth=M)
    assert res.converged and res.relative_error <= 1e-4
    assert res.success
    M4, *_ = low_rank(rng, n, 4)
    sparse = uniform_mask(n, 0.2, 4)
    assert 0.2 < 4 / n  # below the information count r/n
    bad = solve_standard_completion(apply_Rp(M4, sparse), sparse, truth=M4)
    assert bad.relative_error > 1e-1


def test_unit_weights_reduce_to_standard():
    rng = np.random.default_rng(5)
    M, U, V = low_rank(rng, 10, 2)
    mask = uniform_mask(10, 0.6, 6)
    Y = apply_Rp(M, mask)
    a = solve_standard_completion(Y, mask, truth=M)
    b = solve_weighted_completion(Y, mask, make_weight(U, 1.0), make_weight(V, 1.0), truth=M)
    assert np.linalg.norm(a.X_hat - b.X_hat) <= 1e-6


def test_weighted_beats_standard_on_accurate_prior():
    rng = np.random.default_rng(7)
    n, r = 20, 4
    M, U, V = low_rank(rng, n, r)
    QU, QV = make_weight(tilted(rng, U, 0.1), 0.1), make_weight(tilted(rng, V, 0.1), 0.1)
    mask = uniform_mask(n, 0.5, 8)
    Y = apply_Rp(M, mask)
    w = solve_weighted_completion(Y, mask, QU, QV, truth=M)
    s = solve_standard_completion(Y, mask, truth=M)
    assert w.relative_error <= SUCCESS_TOL < s.relative_error


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_weight_scaling_invariance(c):
    rng = np.random.default_rng(9)
    M, U, V = low_rank(rng, 10, 2)
    mask = uniform_mask(10, 0.6, 10)
    Y = apply_Rp(M, mask)
    QU, QV = make_weight(tilted(rng, U, 0.2), 0.4), make_weight(tilted(rng, V, 0.2), 0.4)
    cfg = SolverConfig(abs_tol=1e-10, max_iters=20000)
    a = solve_weighted(Y, mask, QU.matrix, QV.matrix, cfg)
    b = solve_weighted(Y, mask, c * QU.matrix, QV.matrix / c, cfg)
    assert np.linalg.norm(a.X_hat - b.X_hat) <= 1e-6


def test_feasibility_optimality_and_nsp_audit():
    rng = np.random.default_rng(11)
    n, r = 12, 2
    M, U, V = low_rank(rng, n, r)
    Ut, Vt = tilted(rng, U, 0.2), tilted(rng, V, 0.2)
    QU, QV = make_weight(Ut, 0.3), make_weight(Vt, 0.3)
    mask = uniform_mask(n, 0.5, 12)
    res = solve_weighted_completion(apply_Rp(M, mask), mask, QU, QV, truth=M)
    assert res.converged and res.primal_residual <= 1e-8
    assert np.linalg.norm(apply_Pp(res.X_hat, mask) - apply_Pp(M, mask)) <= 1e-8
    assert optimality_gap(res) < 1e-4
    frames = (canonical_decomposition(U, Ut, 0.3), canonical_decomposition(V, Vt, 0.3))
    c = constants(PriorQuality.from_frames(*frames))
    assert nullspace_audit(res.X_hat - M, frames, c).slack >= -1e-6


def test_noisy_ball_constraint():
    rng = np.random.default_rng(13)
    M, *_ = low_rank(rng, 10, 2)
    mask = uniform_mask(10, 0.7, 14)
    E = 1e-3 * rng.standard_normal((10, 10))
    Y = apply_Rp(M + E, mask)
    e = 1.05 * np.linalg.norm(apply_Rp(E, mask))
    res = solve_standard_completion(Y, mask, SolverConfig(noise_level=e, max_iters=5000))
    assert np.linalg.norm(apply_Rp(res.X_hat, mask) - Y) <= e * (1 + 1e-8) + 1e-8
    # the ball lets the nuclear norm drop below the noisy data's interpolant
    exact = solve_standard_completion(Y, mask)
    assert nuclear_norm(res.X_hat) <= nuclear_norm(exact.X_hat) + 1e-6


def test_matches_convex_oracle():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(15)
    n, r = 8, 2
    M, U, V = low_rank(rng, n, r)
    mask = uniform_mask(n, 0.45, 16)
    QU, QV = make_weight(tilted(rng, U, 0.4), 0.5), make_weight(tilted(rng, V, 0.4), 0.5)
    Y = apply_Rp(M, mask)
    ours = solve_weighted_completion(Y, mask, QU, QV, SolverConfig(abs_tol=1e-10, max_iters=50000))
    X = cp.Variable((n, n))
    E = mask.indicators.astype(float)
    prob = cp.Problem(cp.Minimize(cp.normNuc(QU.matrix @ X @ QV.matrix)),
                      [cp.multiply(E, X) == E * M])
    prob.solve(solver="CLARABEL")
    ref = prob.value
    assert nuclear_norm(QU.matrix @ ours.X_hat @ QV.matrix) == pytest.approx(ref, rel=1e-5)


def test_recovery():
    rng = np.random.default_rng(17)
    n, r = 6, 1
    M, U, V = low_rank(rng, n, r)
    ens = gaussian_ensemble(n * n, n, 0)
    y = gaussian_measure(M, ens)
    assert solve_standard_recovery(y, ens, truth=M).relative_error <= 1e-6
    ens = gaussian_ensemble(20, n, 1)
    y = gaussian_measure(M, ens)
    a = solve_standard_recovery(y, ens, truth=M)
    b = solve_weighted_recovery(y, ens, make_weight(U, 1.0), make_weight(V, 1.0), truth=M)
    assert np.linalg.norm(a.X_hat - b.X_hat) <= 1e-6
    w = solve_weighted_recovery(y, ens, make_weight(tilted(rng, U, 0.05), 0.3),
                                make_weight(tilted(rng, V, 0.05), 0.3), truth=M)
    assert w.relative_error <= a.relative_error + 1e-6


def test_perfect_prior_least_squares():
    rng = np.random.default_rng(19)
    n, r = 20, 4
    M, U, V = low_rank(rng, n, r)
    mask = uniform_mask(n, 0.3, 20)
    Y = apply_Rp(M, mask)
    assert perfect_prior_least_squares(Y, mask, U, V, truth=M).relative_error <= 1e-6
    wrong = perfect_prior_least_squares(Y, mask, tilted(rng, U, 0.5), V, truth=M)
    assert wrong.relative_error > 1e-2
    E = np.zeros((n, n), bool)
    E[np.arange(10), np.arange(10)] = True
    tiny = SamplingMask(np.full((n, n), 0.3), E)
    with pytest.raises(UnderdeterminedError):
        perfect_prior_least_squares(apply_Rp(M, tiny), tiny, U, V)


def test_diagonal_uniform_scores_equal_standard():
    rng = np.random.default_rng(22)
    M, *_ = low_rank(rng, 10, 2)
    mask = uniform_mask(10, 0.6, 23)
    Y = apply_Rp(M, mask)
    a = solve_standard_completion(Y, mask)
    b = baseline_diagonal(Y, mask, LeverageProfile.uniform(10, 2))
    assert np.linalg.norm(a.X_hat - b.X_hat) <= 1e-6


def test_diagonal_weights_equalise_leverage():
    rng = np.random.default_rng(26)
    U, V = np.linalg.qr(rng.standard_normal((12, 3)))[0], np.linalg.qr(rng.standard_normal((12, 3)))[0]
    U[0] *= 5.0
    U = np.linalg.qr(U)[0]
    dl, dr = diagonal_weights(leverage_scores(U, V))
    assert dl.max() == pytest.approx(1.0) and dr.max() == pytest.approx(1.0)
    rows = np.linalg.norm(dl[:, None] * U, axis=1)
    np.testing.assert_allclose(rows, rows[0], rtol=1e-12)
    cols = np.linalg.norm(dr[:, None] * V, axis=1)
    np.testing.assert_allclose(cols, cols[0], rtol=1e-12)


def test_wls_behaviour():
    rng = np.random.default_rng(24)
    n, r = 20, 4
    M, U, V = low_rank(rng, n, r)
    Mp = M + 0.01 * rng.standard_normal((n, n)) / n
    mask = uniform_mask(n, 0.6, 25)
    Y = apply_Rp(M, mask)
    assert baseline_wls(Y, mask, Mp, 0.1, truth=M).relative_error > 1e-3
    # huge gamma -> plain least-norm interpolation of the observed entries
    big = baseline_wls(Y, mask, Mp, 1e12)
    np.testing.assert_allclose(big.X_hat, apply_Pp(M, mask), atol=1e-8)
    with pytest.raises(InvalidInputError):
        baseline_wls(Y, mask, Mp, 0.0)


def test_rnnh_weights_and_large_delta():
    rng = np.random.default_rng(26)
    M, *_ = low_rank(rng, 10, 2)
    W1, W1i, W2, W2i = rnnh_weights(M, 0.05)
    S = M @ M.T + 0.05 ** 2 * np.eye(10)
    ref = np.linalg.inv(sqrtm_psd(S))
    np.testing.assert_allclose(W1, ref / np.linalg.norm(ref, 2), atol=1e-10)
    np.testing.assert_allclose(W1 @ W1i, np.eye(10), atol=1e-9)
    np.testing.assert_allclose(W2 @ W2i, np.eye(10), atol=1e-9)
    mask = uniform_mask(10, 0.6, 27)
    Y = apply_Rp(M, mask)
    a = solve_standard_completion(Y, mask)
    b = baseline_rnnh(Y, mask, M, 1e6)
    assert np.linalg.norm(a.X_hat - b.X_hat) <= 1e-6
    with pytest.raises(InvalidInputError):
        rnnh_weights(M, 0.0)


def sqrtm_psd(S):
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(w)) @ V.T


def test_iterative_reweighted():
    rng = np.random.default_rng(28)
    n, r = 12, 2
    M, U, V = low_rank(rng, n, r)
    mask = uniform_mask(n, 0.5, 29)
    Y = apply_Rp(M, mask)
    # one IRW step from an exact initialisation equals one weighted solve
    init = solve_standard_completion(apply_Rp(M, uniform_mask(n, 1.0, 0)), uniform_mask(n, 1.0, 0))
    one = iterative_reweighted(Y, mask, "IRW", 1, r, w=0.2, init=init)
    ref = solve_weighted_completion(Y, mask, make_weight(U, 0.2), make_weight(V, 0.2))
    assert np.linalg.norm(one.X_hat - ref.X_hat) <= 1e-6
    irnn = iterative_reweighted(Y, mask, "IRNN", 3, r, delta=0.05)
    assert len(irnn.info["history"]) == 3
    for before, after in irnn.info["objective_pairs"]:
        assert after <= before + 1e-6
    with pytest.raises(InvalidInputError):
        iterative_reweighted(Y, mask, "IRX", 1, r)
    with pytest.raises(InvalidInputError):
        iterative_reweighted(Y, mask, "IRW", 0, r)
