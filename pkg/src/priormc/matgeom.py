"""Dense linear algebra and subspace geometry primitives.

Everything here works on small dense real matrices (side length in the
tens to low hundreds).  The functions are pure; the dataclasses are
frozen and validated on construction.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class EmptyComplementError(InvalidInputError):
    """Raised when asked to complete a basis that already spans the space."""


ORTHO_TOL = 1e-10


def _as_finite(A, name="A", ndim=2):
    A = np.asarray(A, dtype=float)
    if A.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {A.shape}")
    if A.size == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis of a d-dimensional subspace of R^n.

    Parameters
    ----------
    basis : array_like, (n, d)
        Matrix with orthonormal columns.
    """

    basis: np.ndarray

    def __post_init__(self):
        B = _as_finite(self.basis, "basis")
        n, d = B.shape
        if d > n:
            raise InvalidInputError(f"subspace dimension {d} exceeds ambient dimension {n}")
        err = np.linalg.norm(B.T @ B - np.eye(d))
        if err > ORTHO_TOL:
            raise InvalidInputError(f"basis columns are not orthonormal (Gram error {err:.2e})")
        B = B.copy()
        B.setflags(write=False)
        object.__setattr__(self, "basis", B)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def subspace_dim(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    @classmethod
    def from_columns(cls, A, tol: float = 1e-10) -> "SubspaceBasis":
        """Orthonormal basis for the column span of ``A`` (rank-revealing)."""
        return cls(orth(A, tol=tol))


def as_basis(A) -> SubspaceBasis:
    """Accept either a SubspaceBasis or a raw matrix with orthonormal columns."""
    if isinstance(A, SubspaceBasis):
        return A
    return SubspaceBasis(np.asarray(A, dtype=float))


def _basis_array(A) -> np.ndarray:
    return A.basis if isinstance(A, SubspaceBasis) else np.asarray(A, dtype=float)


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``A = U diag(sigma) V^T`` with sigma nonincreasing."""

    U: SubspaceBasis
    sigma: np.ndarray
    V: SubspaceBasis

    def reconstruct(self) -> np.ndarray:
        return (self.U.basis * self.sigma) @ self.V.basis.T


def _fix_signs(U, Vt):
    # first entry of each left vector that is clearly nonzero is made positive
    k = U.shape[1]
    if k == 0:
        return U, Vt
    mags = np.abs(U)
    thresh = 1e-12 * np.maximum(mags.max(axis=0), 1e-300)
    first = np.argmax(mags > thresh, axis=0)
    signs = np.sign(U[first, np.arange(k)])
    signs[signs == 0] = 1.0
    return U * signs, Vt * signs[:, None]


def svd(A) -> SvdFactors:
    """Thin SVD with a deterministic sign convention.

    Singular values come back nonincreasing (LAPACK order); for each
    singular pair the first clearly nonzero entry of the left vector is
    positive.
    """
    A = _as_finite(A)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    U, Vt = _fix_signs(U, Vt)
    return SvdFactors(SubspaceBasis(U), s, SubspaceBasis(Vt.T))


def truncate_rank(A, r: int) -> Tuple[np.ndarray, np.ndarray]:
    """Split ``A`` into its best rank-r approximation and the remainder.

    Returns
    -------
    M_r : ndarray
        Rank-r truncation built from the leading r singular triplets.
    M_rplus : ndarray
        ``A - M_r``, so that the two parts sum to ``A``.
    """
    A = _as_finite(A)
    if not (1 <= r <= min(A.shape)):
        raise InvalidInputError(f"rank {r} out of range for shape {A.shape}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    M_r = (U[:, :r] * s[:r]) @ Vt[:r]
    return M_r, A - M_r


def orth(A, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis for range(A); columns with sigma <= tol*sigma_1 are dropped."""
    A = _as_finite(A)
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((A.shape[0], 0))
    keep = s > tol * s[0]
    U, _ = _fix_signs(U[:, keep], np.zeros((int(keep.sum()), 1)))
    return U


def principal_angles(A, B) -> np.ndarray:
    """Principal angles between span(A) and span(B), nonincreasing.

    The cosines are the clamped singular values of A^T B.  Sines are
    measured directly as the norms of the components of the matched
    vectors orthogonal to the other subspace, and the angle is
    ``arctan2(sin, cos)``; this agrees with ``arccos(cos)`` but keeps
    full relative accuracy for tiny angles.
    """
    A = _basis_array(A)
    B = _basis_array(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise InvalidInputError(f"ambient dimensions differ: {A.shape} vs {B.shape}")
    if A.shape[1] < B.shape[1]:
        A, B = B, A
    # now dim(A) >= dim(B); every direction of B gets an angle
    _, c, Yt = np.linalg.svd(A.T @ B, full_matrices=False)
    c = np.clip(c, 0.0, 1.0)
    BY = B @ Yt.T
    E = BY - A @ (A.T @ BY)
    s = np.clip(np.linalg.norm(E, axis=0), 0.0, 1.0)
    theta = np.arctan2(s, c)
    return np.sort(theta)[::-1]


@dataclass(frozen=True)
class SupportProjector:
    """The support subspace T of a rank-r matrix with column/row bases U, V."""

    left: SubspaceBasis
    right: SubspaceBasis

    def __post_init__(self):
        left, right = as_basis(self.left), as_basis(self.right)
        if left.ambient_dim != right.ambient_dim:
            raise InvalidInputError("left and right bases live in different ambient spaces")
        if left.subspace_dim != right.subspace_dim:
            raise InvalidInputError("left and right bases have different dimensions")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def n(self) -> int:
        return self.left.ambient_dim

    @property
    def r(self) -> int:
        return self.left.subspace_dim


def _check_T(Z, T: SupportProjector):
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (T.left.ambient_dim, T.right.ambient_dim):
        raise InvalidInputError(f"matrix shape {Z.shape} does not match support dimension {T.n}")
    return Z


def project_T(Z, T: SupportProjector) -> np.ndarray:
    """P_T(Z) = P_U Z + Z P_V - P_U Z P_V."""
    Z = _check_T(Z, T)
    U, V = T.left.basis, T.right.basis
    UZ = U.T @ Z
    ZV = Z @ V
    return U @ UZ + ZV @ V.T - U @ (UZ @ V) @ V.T


def project_T_perp(Z, T: SupportProjector) -> np.ndarray:
    """P_{T-perp}(Z) = (I - P_U) Z (I - P_V)."""
    Z = _check_T(Z, T)
    U, V = T.left.basis, T.right.basis
    W = Z - U @ (U.T @ Z)
    return W - (W @ V) @ V.T


def complete_orthobasis(A) -> SubspaceBasis:
    """Orthonormal basis of the orthogonal complement of span(A)."""
    A = as_basis(A)
    n, d = A.basis.shape
    if d >= n:
        raise EmptyComplementError("basis already spans the ambient space")
    if d == 0:
        return SubspaceBasis(np.eye(n))
    Q, _ = np.linalg.qr(A.basis, mode="complete")
    C = Q[:, d:]
    # one refinement sweep keeps [A | C] orthonormal to ~1e-15
    C = C - A.basis @ (A.basis.T @ C)
    C, _ = np.linalg.qr(C)
    return SubspaceBasis(C)


def nuclear_norm(A) -> float:
    return float(np.sum(np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)))


def spectral_norm(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def inner(A, B) -> float:
    """Frobenius inner product."""
    return float(np.vdot(np.asarray(A, dtype=float), np.asarray(B, dtype=float)))


@dataclass(frozen=True)
class PowerResult:
    """Outcome of a power iteration: estimate, iterations used, convergence flag."""

    value: float
    iterations: int
    converged: bool
    residual: float


def power_norm(apply: Callable[[np.ndarray], np.ndarray], start: np.ndarray,
               tol: float = 1e-6, max_iter: int = 500,
               project: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> PowerResult:
    """Operator norm of a self-adjoint linear map on matrix space.

    Power iteration is run on the composition ``apply(apply(.))``, which is
    positive semidefinite, and the square root of its top eigenvalue is
    returned.  ``project`` (optional) is applied to every iterate, which
    restricts the estimate to an invariant subspace such as T.

    Parameters
    ----------
    apply : callable
        Self-adjoint map Z -> A(Z).
    start : ndarray
        Nonzero starting matrix.
    tol : float
        Relative change in the eigenvalue estimate at which to stop.
    max_iter : int
        Iteration cap.
    """
    X = np.array(start, dtype=float)
    if project is not None:
        X = project(X)
    nrm = np.linalg.norm(X)
    if nrm == 0:
        raise InvalidInputError("power iteration needs a nonzero start")
    X /= nrm
    est = 0.0
    for it in range(1, max_iter + 1):
        Y = apply(apply(X))
        if project is not None:
            Y = project(Y)
        new = np.linalg.norm(Y)
        if new == 0:
            return PowerResult(0.0, it, True, 0.0)
        change = abs(new - est) / new
        X = Y / new
        est = new
        if change <= tol:
            return PowerResult(float(np.sqrt(est)), it, True, float(change))
    return PowerResult(float(np.sqrt(est)), max_iter, False, float(change))
