"""Convex solvers for (weighted) nuclear-norm completion and recovery.

All nuclear-norm programs share one engine.  With invertible weight
matrices W_L, W_R the program

    min ||W_L X W_R||_*   s.t.  ||A(X) - b||_2 <= e

is rewritten in the variable X' = W_L X W_R and solved by Douglas-Rachford
splitting between singular value thresholding and the Euclidean
projection onto the (affine or ball) constraint set in X'.  A(.) is either
the rescaled entry sampler R_p restricted to the observed entries or a
Gaussian measurement ensemble.

Baselines from the experiments (diagonal leverage reweighting, one IRLS
step, the reweighted nuclear-norm heuristic, iterative reweighting) and
the perfect-prior least-squares shortcut live here too.
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq
from scipy.sparse.linalg import LinearOperator, cg

from .matgeom import InvalidInputError, nuclear_norm
from .prior import (DegenerateScoreError, LeverageProfile, WeightOperator,
                    make_weight)
from .sampling import GaussianEnsemble, SamplingMask

SUCCESS_TOL = 1e-3
# problems with more unknowns than this use conjugate gradients instead of
# a factored projection
DENSE_LIMIT = 2500


class UnderdeterminedError(InvalidInputError):
    """The data do not determine the requested least-squares fit."""


@dataclass(frozen=True)
class SolverConfig:
    """Splitting-solver settings.

    Attributes
    ----------
    max_iters : int
        Douglas-Rachford iteration cap.
    abs_tol : float
        Stop once ||prox output - projection output||_F falls below this.
        Measured after scaling the problem so that its least-norm feasible
        point has unit Frobenius norm.
    penalty : float
        Splitting penalty rho; the SVT threshold is ``0.1 / rho`` in the
        same normalised units.
    noise_level : float
        Radius e of the data-fit ball; 0 means equality constraints.
    """

    max_iters: int = 2000
    abs_tol: float = 1e-8
    penalty: float = 1.0
    noise_level: float = 0.0

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if not (self.abs_tol > 0 and self.penalty > 0):
            raise InvalidInputError("abs_tol and penalty must be positive")
        if self.noise_level < 0:
            raise InvalidInputError("noise_level must be nonnegative")


@dataclass
class SolveResult:
    """Recovered matrix and convergence diagnostics.

    ``relative_error`` is ||X_hat - M||_F / ||M||_F when the truth was
    supplied and NaN otherwise.  ``X_prime`` and ``dual`` are the
    substituted-variable solution and the constraint-normal element
    produced by the splitting (None for closed-form baselines).
    """

    X_hat: np.ndarray
    iterations: int
    primal_residual: float
    relative_error: float
    converged: bool
    objective: float = float("nan")
    trace: List[float] = field(default_factory=list)
    X_prime: Optional[np.ndarray] = None
    dual: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return bool(self.relative_error <= SUCCESS_TOL)


def relative_error(X, M) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.linalg.norm(np.asarray(X) - M) / np.linalg.norm(M))


def svt(Z, tau: float) -> np.ndarray:
    """Singular value soft-thresholding, the prox of tau * ||.||_*."""
    if tau < 0:
        raise InvalidInputError("tau must be nonnegative")
    U, s, Vt = np.linalg.svd(np.asarray(Z, dtype=float), full_matrices=False)
    return (U * np.maximum(s - tau, 0.0)) @ Vt


# measurement models ---------------------------------------------------------

class _Completion:
    """Observed entries of R_p: A(X) = X[idx] / p[idx], b = Y[idx]."""

    def __init__(self, Y, mask: SamplingMask):
        Y = np.asarray(Y, dtype=float)
        if Y.shape != mask.shape:
            raise InvalidInputError(f"data shape {Y.shape} does not match mask {mask.shape}")
        self.shape = mask.shape
        self.rows, self.cols = np.nonzero(mask.indicators)
        self.scale = 1.0 / mask.probs[self.rows, self.cols]
        self.b = Y[self.rows, self.cols]
        self.mask = mask

    @property
    def k(self):
        return self.rows.size

    def apply(self, X):
        return X[self.rows, self.cols] * self.scale

    def adjoint(self, v):
        Z = np.zeros(self.shape)
        Z[self.rows, self.cols] = v * self.scale
        return Z

    def sensing(self):
        """Stack of sensing matrices A_k with <A_k, X> = A(X)_k, shape (k, n1, n2)."""
        S = np.zeros((self.k,) + self.shape)
        S[np.arange(self.k), self.rows, self.cols] = self.scale
        return S

    def weighted_rows(self, WLi, WRi):
        # row k is vec(WLi^T A_k WRi^T) = scale_k * outer(WLi[i, :], WRi[:, j])
        R = WLi[self.rows, :, None] * WRi.T[self.cols, None, :]
        return (R * self.scale[:, None, None]).reshape(self.k, -1)

    def unscaled_data(self):
        """Observed entries of the underlying matrix (b times p)."""
        return self.b / self.scale


class _Gaussian:
    """Gaussian ensemble: A(X)_k = <G_k, X>."""

    def __init__(self, y, ens: GaussianEnsemble):
        y = np.asarray(y, dtype=float).ravel()
        if y.size != ens.m:
            raise InvalidInputError(f"{y.size} measurements for an ensemble of size {ens.m}")
        self.shape = (ens.n, ens.n)
        self.b = y
        self.G = ens.G
        self.ens = ens

    @property
    def k(self):
        return self.b.size

    def apply(self, X):
        return self.G @ X.ravel()

    def adjoint(self, v):
        return (v @ self.G).reshape(self.shape)

    def sensing(self):
        return self.G.reshape((self.k,) + self.shape)

    def weighted_rows(self, WLi, WRi):
        S = self.sensing()
        return (WLi.T @ S @ WRi.T).reshape(self.k, -1)


def _measurement(data, sampler):
    if isinstance(sampler, SamplingMask):
        return _Completion(data, sampler)
    if isinstance(sampler, GaussianEnsemble):
        return _Gaussian(data, sampler)
    raise InvalidInputError(f"unsupported sampler type {type(sampler).__name__}")


# constraint projections in the substituted variable -------------------------

class _DenseProjector:
    """Projection onto {x : ||A x - b|| <= e} with A held densely.

    A is factored once by an SVD (not through A A^T, which would square
    its condition number); the affine projection is then two
    matrix-vector products and the ball projection reduces to a scalar
    secular equation in the singular basis.
    """

    def __init__(self, A, b, e):
        self.A = A
        V, sv, Wt = np.linalg.svd(A, full_matrices=False)
        if sv[-1] <= max(A.shape) * np.finfo(float).eps * max(sv[0], 1e-300):
            raise UnderdeterminedError("measurement rows are linearly dependent")
        # ascending order, as the eigenvalues of A A^T
        V, sv, Wt = V[:, ::-1], sv[::-1], Wt[::-1]
        self.s, self.V = sv ** 2, V
        self.AtV = Wt.T * sv
        self.b = b
        self.e = e

    def least_norm(self, b=None):
        b = self.b if b is None else b
        return self.AtV @ ((self.V.T @ b) / self.s)

    def project(self, x):
        g = self.V.T @ (self.A @ x - self.b)
        if self.e == 0.0:
            return x - self.AtV @ (g / self.s)
        if np.linalg.norm(g) <= self.e:
            return x
        s, e = self.s, self.e
        f = lambda t: np.linalg.norm(g / (1.0 + t * s)) - e
        hi = 1.0 / s[0]
        while f(hi) > 0:
            hi *= 10.0
        t = brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-14)
        return x - self.AtV @ (g * t / (1.0 + t * s))

    def range_part(self, x):
        """Orthogonal projection of x onto range(A^T)."""
        return self.AtV @ ((self.AtV.T @ x) / self.s)


class _CGProjector:
    """Same projections, with A A^T inverted by conjugate gradients."""

    def __init__(self, apply_A, apply_At, k, b, e, rtol=1e-10):
        self.apply_A, self.apply_At = apply_A, apply_At
        self.b, self.e, self.rtol = b, e, rtol
        self.k = k

    def _solve(self, rhs, shift=0.0):
        op = LinearOperator((self.k, self.k), dtype=float,
                            matvec=lambda v: self.apply_A(self.apply_At(v)) + shift * v)
        sol, info = cg(op, rhs, rtol=self.rtol, atol=0.0, maxiter=10 * self.k)
        return sol

    def least_norm(self, b=None):
        b = self.b if b is None else b
        return self.apply_At(self._solve(b))

    def project(self, x):
        res = self.apply_A(x) - self.b
        if self.e == 0.0:
            return x - self.apply_At(self._solve(res))
        if np.linalg.norm(res) <= self.e:
            return x

        def step(t):
            # x(t) = x - A^T (A A^T + I/t)^{-1} res
            return self._solve(res, shift=1.0 / t)

        def f(t):
            y = step(t)
            return np.linalg.norm(res - self.apply_A(self.apply_At(y))) - self.e

        lo, hi = 1e-12, 1.0
        while f(hi) > 0:
            hi *= 10.0
        t = brentq(f, lo, hi, xtol=1e-12, rtol=1e-10)
        return x - self.apply_At(step(t))

    def range_part(self, x):
        return self.apply_At(self._solve(self.apply_A(x)))


def _solve_nuclear(meas, WL, WR, WLi, WRi, cfg: SolverConfig, truth=None,
                   z0=None) -> SolveResult:
    """Douglas-Rachford on min ||X'||_* s.t. ||A(WLi X' WRi) - b|| <= e."""
    n1, n2 = meas.shape
    N = n1 * n2
    e = float(cfg.noise_level)
    if N <= DENSE_LIMIT:
        proj = _DenseProjector(meas.weighted_rows(WLi, WRi), meas.b, e)
    else:
        fA = lambda x: meas.apply(WLi @ x.reshape(n1, n2) @ WRi)
        fAt = lambda v: (WLi.T @ meas.adjoint(v) @ WRi.T).ravel()
        proj = _CGProjector(fA, fAt, meas.k, meas.b, e)

    x_ln = proj.least_norm()
    scale = float(np.linalg.norm(x_ln))
    if scale == 0.0:
        X = np.zeros((n1, n2))
        rel = relative_error(X, truth) if truth is not None else float("nan")
        return SolveResult(X, 0, 0.0, rel, True, 0.0, [], X, np.zeros((n1, n2)))
    # work with data scaled so the least-norm feasible point has unit norm
    proj.b = meas.b / scale
    proj.e = e / scale
    tau = 0.1 / cfg.penalty

    z = x_ln / scale if z0 is None else np.asarray(z0, dtype=float).ravel()
    trace = []
    converged = False
    res = np.inf
    it = 0
    for it in range(1, int(cfg.max_iters) + 1):
        U, s, Vt = np.linalg.svd(z.reshape(n1, n2), full_matrices=False)
        x = ((U * np.maximum(s - tau, 0.0)) @ Vt).ravel()
        y = proj.project(2.0 * x - z)
        d = y - x
        res = float(np.linalg.norm(d))
        z = z + d
        trace.append(res)
        if res <= cfg.abs_tol:
            converged = True
            break

    # subgradient of ||.||_* at x is (z_prev - x)/tau; after the update z = z_prev + y - x
    G = (z - y) / tau
    dual = proj.range_part(G).reshape(n1, n2)
    Xp = y.reshape(n1, n2) * scale
    X = WLi @ Xp @ WRi
    rel = relative_error(X, truth) if truth is not None else float("nan")
    return SolveResult(X, it, res, rel, converged, nuclear_norm(Xp), trace,
                       Xp, dual, {"scale": scale, "tau": tau, "z": z.reshape(n1, n2) * scale})


def optimality_gap(result: SolveResult, rank_tol: float = 1e-6) -> float:
    """Distance from the returned normal-cone element to the subdifferential.

    Uses the SVD of X' to split the dual element into its component on the
    support (compared with U V^T) and its spectral excess off the support.
    """
    Xp, D = result.X_prime, result.dual
    if Xp is None or D is None:
        raise InvalidInputError("result carries no splitting diagnostics")
    U, s, Vt = np.linalg.svd(Xp)
    if s[0] == 0:
        k = 0
    else:
        k = int(np.sum(s > rank_tol * s[0]))
    Uk, Vk = U[:, :k], Vt[:k].T
    PU, PV = Uk @ Uk.T, Vk @ Vk.T
    on = PU @ D + D @ PV - PU @ D @ PV
    off = D - on
    sign = Uk @ Vk.T
    off_s = np.linalg.svd(off, compute_uv=False)
    excess = np.maximum(off_s - 1.0, 0.0)
    return float(np.sqrt(np.linalg.norm(on - sign) ** 2 + np.sum(excess ** 2)))


def _check_weights(QU: WeightOperator, QV: WeightOperator, shape):
    if QU.n != shape[0] or QV.n != shape[1]:
        raise InvalidInputError("weight operators do not match the matrix shape")


def solve_weighted_completion(Y, mask: SamplingMask, QU: WeightOperator, QV: WeightOperator,
                              cfg: SolverConfig = SolverConfig(), truth=None) -> SolveResult:
    """min ||Q_U X Q_V||_* s.t. ||R_p(X) - Y||_F <= e.

    ``Y`` is the rescaled data R_p(M + E), zero off the mask.
    """
    meas = _Completion(Y, mask)
    _check_weights(QU, QV, meas.shape)
    return _solve_nuclear(meas, QU.matrix, QV.matrix, QU.inverse, QV.inverse, cfg, truth)


def solve_standard_completion(Y, mask: SamplingMask, cfg: SolverConfig = SolverConfig(),
                              truth=None) -> SolveResult:
    """min ||X||_* s.t. ||R_p(X) - Y||_F <= e."""
    meas = _Completion(Y, mask)
    I1, I2 = np.eye(meas.shape[0]), np.eye(meas.shape[1])
    return _solve_nuclear(meas, I1, I2, I1, I2, cfg, truth)


def solve_weighted_recovery(y, ens: GaussianEnsemble, QU: WeightOperator, QV: WeightOperator,
                            cfg: SolverConfig = SolverConfig(), truth=None) -> SolveResult:
    """min ||Q_U X Q_V||_* s.t. ||R_m(X) - y||_2 <= e."""
    meas = _Gaussian(y, ens)
    _check_weights(QU, QV, meas.shape)
    return _solve_nuclear(meas, QU.matrix, QV.matrix, QU.inverse, QV.inverse, cfg, truth)


def solve_standard_recovery(y, ens: GaussianEnsemble, cfg: SolverConfig = SolverConfig(),
                            truth=None) -> SolveResult:
    """min ||X||_* s.t. ||R_m(X) - y||_2 <= e."""
    meas = _Gaussian(y, ens)
    I = np.eye(ens.n)
    return _solve_nuclear(meas, I, I, I, I, cfg, truth)


def solve_weighted(data, sampler, WL, WR, cfg: SolverConfig = SolverConfig(), truth=None,
                   WL_inv=None, WR_inv=None) -> SolveResult:
    """Generic weighted program with arbitrary invertible weight matrices."""
    meas = _measurement(data, sampler)
    WL = np.asarray(WL, dtype=float)
    WR = np.asarray(WR, dtype=float)
    WLi = np.linalg.inv(WL) if WL_inv is None else WL_inv
    WRi = np.linalg.inv(WR) if WR_inv is None else WR_inv
    return _solve_nuclear(meas, WL, WR, WLi, WRi, cfg, truth)


def perfect_prior_least_squares(Y, mask, U, V, truth=None) -> SolveResult:
    """Fit X = U C V^T to the data by least squares over the r1 x r2 core C."""
    meas = _measurement(Y, mask)
    U = np.asarray(getattr(U, "basis", U), dtype=float)
    V = np.asarray(getattr(V, "basis", V), dtype=float)
    r1, r2 = U.shape[1], V.shape[1]
    S = meas.sensing()
    # column (a, b) of the design holds <A_k, U[:, a] V[:, b]^T>
    D = np.einsum("kij,ia,jb->kab", S, U, V).reshape(meas.k, r1 * r2)
    if meas.k < r1 * r2 or np.linalg.matrix_rank(D) < r1 * r2:
        raise UnderdeterminedError("observations do not determine the core matrix")
    c, *_ = np.linalg.lstsq(D, meas.b, rcond=None)
    X = U @ c.reshape(r1, r2) @ V.T
    res = float(np.linalg.norm(D @ c - meas.b))
    rel = relative_error(X, truth) if truth is not None else float("nan")
    return SolveResult(X, 1, res, rel, True, info={"core": c.reshape(r1, r2)})


def diagonal_weights(lev: LeverageProfile):
    """D = diag(sqrt(mu_i r / n))^{-1} scaled to unit maximum, for rows and columns.

    Minimising ||D_L X D_R||_* under uniform sampling is standard completion
    of D_L M D_R, whose row norms D_i ||U_i|| are equal for this choice: the
    reweighting equalises the leverage scores with the sampling rate.
    """
    if np.any(lev.mu <= 0) or np.any(lev.nu <= 0):
        raise DegenerateScoreError("diagonal reweighting needs positive leverage scores")
    dl = 1.0 / np.sqrt(lev.mu * lev.rank / lev.mu.size)
    dr = 1.0 / np.sqrt(lev.nu * lev.rank / lev.nu.size)
    return dl / dl.max(), dr / dr.max()


def baseline_diagonal(Y, mask, lev: LeverageProfile, cfg: SolverConfig = SolverConfig(),
                      truth=None) -> SolveResult:
    """Standard completion of D_L X D_R with leverage-based diagonal weights."""
    dl, dr = diagonal_weights(lev)
    return solve_weighted(Y, mask, np.diag(dl), np.diag(dr), cfg, truth,
                          WL_inv=np.diag(1.0 / dl), WR_inv=np.diag(1.0 / dr))


def baseline_wls(Y, mask, M_prime, gamma: float = 0.1, cfg: SolverConfig = SolverConfig(),
                 truth=None) -> SolveResult:
    """One IRLS step: min ||W_L^{1/2} X W_R^{1/2}||_F^2 subject to the data.

    W_L = (M' M'^T + gamma I)^{-1} and W_R = (M'^T M' + gamma I)^{-1}.  The
    minimiser is X = sum_k z_k S_L A_k S_R with S_L = W_L^{-1},
    S_R = W_R^{-1} and z solving the k x k normal equations.
    """
    if gamma <= 0:
        raise InvalidInputError("gamma must be positive")
    meas = _measurement(Y, mask)
    Mp = np.asarray(M_prime, dtype=float)
    SL = Mp @ Mp.T + gamma * np.eye(Mp.shape[0])
    SR = Mp.T @ Mp + gamma * np.eye(Mp.shape[1])
    # rescaling both factors leaves the minimiser unchanged and keeps the
    # normal equations well scaled for large gamma
    SL /= np.linalg.norm(SL, 2)
    SR /= np.linalg.norm(SR, 2)
    S = meas.sensing()
    HS = SL @ S @ SR
    K = HS.reshape(meas.k, -1) @ S.reshape(meas.k, -1).T
    try:
        cf = sla.cho_factor(K)
    except np.linalg.LinAlgError:
        raise UnderdeterminedError("weighted normal equations are singular")
    z = sla.cho_solve(cf, meas.b)
    X = np.tensordot(z, HS, axes=1)
    res = float(np.linalg.norm(meas.apply(X) - meas.b))
    rel = relative_error(X, truth) if truth is not None else float("nan")
    return SolveResult(X, 1, res, rel, True)


def _inv_sqrt_psd(S):
    w, V = np.linalg.eigh(S)
    return (V / np.sqrt(w)) @ V.T, (V * np.sqrt(w)) @ V.T


def rnnh_weights(M_prime, delta: float):
    """W1 = (M'M'^T + delta^2 I)^{-1/2}, W2 = (M'^T M' + delta^2 I)^{-1/2}.

    Both are scaled to unit spectral norm (the argmin is unaffected).
    Returns (W1, W1_inv, W2, W2_inv).
    """
    if delta <= 0:
        raise InvalidInputError("delta must be positive")
    Mp = np.asarray(M_prime, dtype=float)
    W1, W1i = _inv_sqrt_psd(Mp @ Mp.T + delta ** 2 * np.eye(Mp.shape[0]))
    W2, W2i = _inv_sqrt_psd(Mp.T @ Mp + delta ** 2 * np.eye(Mp.shape[1]))
    c1, c2 = np.linalg.norm(W1, 2), np.linalg.norm(W2, 2)
    return W1 / c1, W1i * c1, W2 / c2, W2i * c2


def baseline_rnnh(Y, mask, M_prime, delta: float = 0.01, cfg: SolverConfig = SolverConfig(),
                  truth=None) -> SolveResult:
    """One reweighted nuclear-norm solve with weights built from M'."""
    W1, W1i, W2, W2i = rnnh_weights(M_prime, delta)
    return solve_weighted(Y, mask, W1, W2, cfg, truth, WL_inv=W1i, WR_inv=W2i)


def _top_subspaces(X, r):
    U, _, Vt = np.linalg.svd(X)
    return U[:, :r], Vt[:r].T


def iterative_reweighted(Y, mask, variant: str, iterations: int, r: int,
                         cfg: SolverConfig = SolverConfig(), truth=None,
                         w: float = 0.1, delta: float = 0.01,
                         init: Optional[SolveResult] = None) -> SolveResult:
    """Iterated weighting started from standard nuclear-norm minimisation.

    ``variant='IRW'`` rebuilds Q weights (weight ``w``) from the rank-r
    singular subspaces of the current iterate; ``variant='IRNN'`` rebuilds
    the RNNH weights (parameter ``delta``) from the current iterate.

    The returned result's ``info['history']`` lists the result after each
    weighted iteration; ``info['objective_pairs']`` holds, per iteration
    k, the pair (||W^k X^k W^k||_*, ||W^k X^{k+1} W^k||_*).
    """
    variant = variant.upper()
    if variant not in ("IRW", "IRNN"):
        raise InvalidInputError(f"unknown variant {variant}")
    if iterations < 1:
        raise InvalidInputError("iterations must be >= 1")
    current = init if init is not None else _standard_any(Y, mask, cfg, truth)
    history, pairs = [], []
    for _ in range(iterations):
        X = current.X_hat
        if variant == "IRW":
            U, V = _top_subspaces(X, r)
            QU, QV = make_weight(U, w), make_weight(V, w)
            WL, WLi, WR, WRi = QU.matrix, QU.inverse, QV.matrix, QV.inverse
        else:
            WL, WLi, WR, WRi = rnnh_weights(X, delta)
        nxt = solve_weighted(Y, mask, WL, WR, cfg, truth, WL_inv=WLi, WR_inv=WRi)
        pairs.append((nuclear_norm(WL @ X @ WR), nuclear_norm(WL @ nxt.X_hat @ WR)))
        history.append(nxt)
        current = nxt
    out = replace(current)
    out.info = dict(current.info, history=history, objective_pairs=pairs, variant=variant)
    return out


def _standard_any(Y, sampler, cfg, truth):
    meas = _measurement(Y, sampler)
    I1, I2 = np.eye(meas.shape[0]), np.eye(meas.shape[1])
    return _solve_nuclear(meas, I1, I2, I1, I2, cfg, truth)


def solve_standard(Y, sampler, cfg: SolverConfig = SolverConfig(), truth=None) -> SolveResult:
    """Standard nuclear-norm program for either sampler type."""
    return _standard_any(Y, sampler, cfg, truth)
