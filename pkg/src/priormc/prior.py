"""Prior-subspace machinery.

Weight operators ``Q = w P_S + P_{S-perp}``, the canonical decomposition
that puts a true subspace and its prior estimate into a common frame,
leverage scores, coherence and the leverage-weighted norms used by the
completion analysis.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np

from .matgeom import (InvalidInputError, SubspaceBasis, as_basis,
                      complete_orthobasis, orth)


class InvalidWeightError(InvalidInputError):
    """Weight outside (0, 1]."""


class AmbientTooSmallError(InvalidInputError):
    """Canonical decomposition needs 2r <= n."""


class DegenerateScoreError(InvalidInputError):
    """A leverage score is zero, so the weighted norms are undefined."""


# directions whose sine falls below this are treated as exactly aligned
SIN_FLOOR = 1e-8


@dataclass(frozen=True)
class WeightOperator:
    """Q = w * P_S + P_{S-perp} for a subspace S and weight w in (0, 1]."""

    subspace: SubspaceBasis
    weight: float

    @property
    def n(self) -> int:
        return self.subspace.ambient_dim

    @cached_property
    def matrix(self) -> np.ndarray:
        U = self.subspace.basis
        return np.eye(self.n) - (1.0 - self.weight) * (U @ U.T)

    @cached_property
    def inverse(self) -> np.ndarray:
        U = self.subspace.basis
        return np.eye(self.n) + (1.0 / self.weight - 1.0) * (U @ U.T)


def make_weight(subspace, w: float) -> WeightOperator:
    """Build the weight operator for a prior subspace.

    ``w = 1`` gives the identity; smaller ``w`` expresses more trust in
    the prior.  ``w = 0`` is excluded because the solvers need Q^{-1}.
    """
    w = float(w)
    if not (0.0 < w <= 1.0) or not np.isfinite(w):
        raise InvalidWeightError(f"weight must lie in (0, 1], got {w}")
    return WeightOperator(as_basis(subspace), w)


@dataclass(frozen=True)
class CanonicalFrame:
    """Common frame for a subspace U and its prior estimate U_tilde.

    With ``c = cos(angles)``, ``s = sin(angles)`` and ``r`` angles,

    * ``B = [U, U', U'']`` and ``B_tilde = [U_tilde, U_tilde', U'']`` are
      orthonormal bases of R^n with
      ``B^T B_tilde = [[c, s, 0], [-s, c, 0], [0, 0, I]]``;
    * ``Q = B O L B^T`` where Q is the weight operator of ``U_tilde``,
      ``O`` is orthogonal and ``L`` is upper triangular with diagonal
      blocks ``L11 = Delta``, ``L22 = w / Delta`` and off-diagonal block
      ``L12 = (1 - w^2) s c / Delta``; ``Delta = sqrt(w^2 c^2 + s^2)``.

    The r x r blocks are stored as dense diagonal matrices.  U is
    re-oriented inside its own span so that the angles are nonincreasing.
    """

    B: np.ndarray
    B_tilde: np.ndarray
    O: np.ndarray
    angles: np.ndarray
    delta: np.ndarray
    L11: np.ndarray
    L12: np.ndarray
    L22: np.ndarray
    weight: float

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def r(self) -> int:
        return self.angles.shape[0]

    @property
    def Delta(self) -> np.ndarray:
        return np.diag(self.delta)

    @property
    def U(self) -> np.ndarray:
        return self.B[:, :self.r]

    @property
    def U_prime(self) -> np.ndarray:
        return self.B[:, self.r:2 * self.r]

    @property
    def U_dprime(self) -> np.ndarray:
        return self.B[:, 2 * self.r:]

    @property
    def U_tilde(self) -> np.ndarray:
        return self.B_tilde[:, :self.r]

    @property
    def largest_angle(self) -> float:
        return float(self.angles[0]) if self.r else 0.0

    @cached_property
    def L(self) -> np.ndarray:
        n, r = self.n, self.r
        L = np.eye(n)
        L[:r, :r] = self.L11
        L[:r, r:2 * r] = self.L12
        L[r:2 * r, r:2 * r] = self.L22
        return L

    def rotation_block(self) -> np.ndarray:
        """The Lemma-style block rotation that B^T B_tilde should equal."""
        n, r = self.n, self.r
        c, s = np.cos(self.angles), np.sin(self.angles)
        G = np.eye(n)
        G[:r, :r] = np.diag(c)
        G[:r, r:2 * r] = np.diag(s)
        G[r:2 * r, :r] = -np.diag(s)
        G[r:2 * r, r:2 * r] = np.diag(c)
        return G

    def weight_matrix(self) -> np.ndarray:
        """Q rebuilt from the frame as B O L B^T."""
        return self.B @ self.O @ self.L @ self.B.T


def canonical_decomposition(U, U_tilde, w: float) -> CanonicalFrame:
    """Canonical frame of a subspace pair (see :class:`CanonicalFrame`).

    The complementary directions U' are read off from the residual of
    U_tilde against span(U) after aligning both bases through the SVD of
    U^T U_tilde.  Directions whose sine is below ``SIN_FLOOR`` carry no
    residual to normalise; those columns of U' are filled by an
    orthonormal completion instead of dividing by sin.
    """
    U = as_basis(U)
    Ut = as_basis(U_tilde)
    w = make_weight(Ut, w).weight
    n, r = U.basis.shape
    if Ut.basis.shape != (n, r):
        raise InvalidInputError(f"subspace shapes differ: {U.basis.shape} vs {Ut.basis.shape}")
    if 2 * r > n:
        raise AmbientTooSmallError(f"need 2r <= n, got r={r}, n={n}")

    X, c, Yt = np.linalg.svd(U.basis.T @ Ut.basis)
    # LAPACK orders cosines decreasingly, i.e. angles increasingly; flip
    X, c, Y = X[:, ::-1], np.clip(c[::-1], 0.0, 1.0), Yt[::-1].T
    Ua = U.basis @ X
    Uta = Ut.basis @ Y
    E = Uta - Ua * c
    s = np.clip(np.linalg.norm(E, axis=0), 0.0, 1.0)
    angles = np.arctan2(s, c)
    # re-normalise (c, s) onto the unit circle
    c, s = np.cos(angles), np.sin(angles)

    good = s >= SIN_FLOOR
    Up = np.zeros((n, r))
    Up[:, good] = -E[:, good] / s[good]
    # clean residual components along U, then fill the aligned directions
    Up[:, good] -= Ua @ (Ua.T @ Up[:, good])
    if np.any(~good):
        known = np.hstack([Ua, Up[:, good]])
        fill = complete_orthobasis(SubspaceBasis(orth(known)) if known.size else np.zeros((n, 0)))
        Up[:, ~good] = fill.basis[:, :int((~good).sum())]
    # polish to orthonormality without moving span(U')
    Uq, _, Vq = np.linalg.svd(Up, full_matrices=False)
    Up = Uq @ Vq

    Utp = Ua * s + Up * c
    Ubase = np.hstack([Ua, Up])
    Udd = complete_orthobasis(SubspaceBasis(Ubase)).basis if 2 * r < n else np.zeros((n, 0))
    B = np.hstack([Ua, Up, Udd])
    Bt = np.hstack([Uta, Utp, Udd])

    delta = np.sqrt(w ** 2 * c ** 2 + s ** 2)
    a = (w * c ** 2 + s ** 2) / delta
    b = (1.0 - w) * s * c / delta
    O = np.eye(n)
    O[:r, :r] = np.diag(a)
    O[:r, r:2 * r] = -np.diag(b)
    O[r:2 * r, :r] = np.diag(b)
    O[r:2 * r, r:2 * r] = np.diag(a)
    L11 = np.diag(delta)
    L12 = np.diag((1.0 - w ** 2) * s * c / delta)
    L22 = np.diag(w / delta)
    return CanonicalFrame(B, Bt, O, angles, delta, L11, L12, L22, w)


@dataclass(frozen=True)
class LeverageProfile:
    """Row scores ``mu``, column scores ``nu`` and the rank they refer to."""

    mu: np.ndarray
    nu: np.ndarray
    rank: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        nu = np.asarray(self.nu, dtype=float)
        if mu.ndim != 1 or nu.ndim != 1:
            raise InvalidInputError("leverage scores must be vectors")
        if np.any(mu < 0) or np.any(nu < 0) or not (np.all(np.isfinite(mu)) and np.all(np.isfinite(nu))):
            raise InvalidInputError("leverage scores must be finite and nonnegative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @classmethod
    def uniform(cls, n: int, r: int, value: float = 1.0) -> "LeverageProfile":
        """Flat profile, e.g. every score set to a coherence upper bound."""
        return cls(np.full(n, float(value)), np.full(n, float(value)), r)


def _scores(B: np.ndarray) -> np.ndarray:
    n, d = B.shape
    return (n / d) * np.sum(B ** 2, axis=1)


def leverage_scores(left, right) -> LeverageProfile:
    """mu_i = (n/r) ||U[i,:]||^2 and nu_j = (n/r) ||V[j,:]||^2.

    Each side is normalised by its own dimension, which matters only for
    the breve bases (whose dimension may differ from r).
    """
    left, right = as_basis(left), as_basis(right)
    return LeverageProfile(_scores(left.basis), _scores(right.basis), left.subspace_dim)


def coherence(left, right) -> float:
    """Largest leverage score over rows and columns; lies in [1, n/r]."""
    lev = leverage_scores(left, right)
    return float(max(lev.mu.max(), lev.nu.max()))


def breve_bases(U, U_tilde, V, V_tilde) -> Tuple[SubspaceBasis, SubspaceBasis]:
    """Orthonormal bases of span([U, U_tilde]) and span([V, V_tilde])."""
    U, Ut, V, Vt = (as_basis(x) for x in (U, U_tilde, V, V_tilde))
    if U.ambient_dim != Ut.ambient_dim or V.ambient_dim != Vt.ambient_dim:
        raise InvalidInputError("ambient dimensions differ")
    Ub = orth(np.hstack([U.basis, Ut.basis]), tol=1e-8)
    Vb = orth(np.hstack([V.basis, Vt.basis]), tol=1e-8)
    return SubspaceBasis(Ub), SubspaceBasis(Vb)


def _weights(lev: LeverageProfile, shape):
    if shape != (lev.mu.shape[0], lev.nu.shape[0]):
        raise InvalidInputError(f"matrix shape {shape} does not match scores")
    if np.any(lev.mu <= 0) or np.any(lev.nu <= 0):
        raise DegenerateScoreError("weighted norms need strictly positive leverage scores")
    n1, n2 = shape
    a = np.sqrt(n1 / (lev.mu * lev.rank))
    b = np.sqrt(n2 / (lev.nu * lev.rank))
    return a, b


def weighted_inf_norm(Z, lev: LeverageProfile) -> float:
    """max_ij sqrt(n/(mu_i r)) |Z_ij| sqrt(n/(nu_j r))."""
    Z = np.asarray(Z, dtype=float)
    a, b = _weights(lev, Z.shape)
    return float(np.max(np.abs(Z) * a[:, None] * b[None, :]))


def weighted_inf2_norm(Z, lev: LeverageProfile) -> float:
    """Largest reweighted row or column l2 norm."""
    Z = np.asarray(Z, dtype=float)
    a, b = _weights(lev, Z.shape)
    rows = a * np.linalg.norm(Z, axis=1)
    cols = b * np.linalg.norm(Z, axis=0)
    return float(max(rows.max(), cols.max()))
