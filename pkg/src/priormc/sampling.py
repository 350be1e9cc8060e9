"""Measurement operators.

Bernoulli entry sampling (uniform or leveraged), the rescaled sampling
operator R_p and its support projection P_p, their rotated versions, and
dense Gaussian measurement ensembles with an empirical RIP probe.
"""
import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .matgeom import InvalidInputError, PowerResult, power_norm
from .prior import LeverageProfile

P_FLOOR = 1e-6
DEFAULT_MULTIPLIER = 10.0


class InvalidFrameError(InvalidInputError):
    """Rotation frame is not orthonormal."""


def _rng(seed):
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class SamplingMask:
    """Realised Bernoulli observation pattern.

    Attributes
    ----------
    probs : ndarray, (n, n)
        Observation probabilities p_ij in (0, 1].
    indicators : ndarray of bool, (n, n)
        Realised eps_ij.
    seed : int or None
        Seed the indicators were drawn from.
    """

    probs: np.ndarray
    indicators: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        P = np.asarray(self.probs, dtype=float)
        E = np.asarray(self.indicators).astype(bool)
        if P.ndim != 2 or P.shape != E.shape:
            raise InvalidInputError("probabilities and indicators must be matching matrices")
        if not (np.all(P > 0) and np.all(P <= 1)):
            raise InvalidInputError("probabilities must lie in (0, 1]")
        P = P.copy()
        E = E.copy()
        P.setflags(write=False)
        E.setflags(write=False)
        object.__setattr__(self, "probs", P)
        object.__setattr__(self, "indicators", E)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def shape(self):
        return self.probs.shape

    @property
    def l(self) -> float:
        return float(self.probs.min())

    @property
    def h(self) -> float:
        return float(self.probs.max())

    @property
    def count(self) -> int:
        return int(self.indicators.sum())

    def to_csv(self) -> str:
        """Observed entries as ``i,j,p`` rows after an ``# n=..,seed=..`` line."""
        buf = io.StringIO()
        seed = "" if self.seed is None else str(self.seed)
        buf.write(f"# n={self.n},seed={seed},p_fill={self.l!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "p"])
        for i, j in zip(*np.nonzero(self.indicators)):
            w.writerow([int(i), int(j), repr(float(self.probs[i, j]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SamplingMask":
        """Inverse of :meth:`to_csv`; unobserved entries get ``p_fill``."""
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise InvalidInputError("missing '# n=..,seed=..' header line")
        meta = dict(kv.split("=", 1) for kv in lines[0][1:].strip().split(","))
        n = int(meta["n"])
        seed = int(meta["seed"]) if meta.get("seed") else None
        fill = float(meta.get("p_fill", "1.0"))
        reader = csv.reader(lines[1:])
        header = next(reader)
        if header != ["i", "j", "p"]:
            raise InvalidInputError(f"unexpected header {header}")
        P = np.full((n, n), fill)
        E = np.zeros((n, n), dtype=bool)
        for row in reader:
            i, j, p = int(row[0]), int(row[1]), float(row[2])
            P[i, j] = p
            E[i, j] = True
        return cls(P, E, seed)


def mask_from_probs(probs, seed) -> SamplingMask:
    """Draw independent indicators eps_ij ~ Bernoulli(p_ij)."""
    P = np.asarray(probs, dtype=float)
    E = _rng(seed).random(P.shape) < P
    return SamplingMask(P, E, seed)


def uniform_mask(n: int, p: float, seed) -> SamplingMask:
    """Every entry observed independently with probability p."""
    if not (0.0 < p <= 1.0):
        raise InvalidInputError(f"p must lie in (0, 1], got {p}")
    return mask_from_probs(np.full((n, n), float(p)), seed)


def leveraged_probs(lev: LeverageProfile, r: int, n: int,
                    multiplier: float = DEFAULT_MULTIPLIER) -> np.ndarray:
    """p_ij = clamp(multiplier (mu_i + nu_j) r log(n) / n, P_FLOOR, 1)."""
    if multiplier <= 0:
        raise InvalidInputError("multiplier must be positive")
    raw = multiplier * (lev.mu[:, None] + lev.nu[None, :]) * r * np.log(n) / n
    return np.clip(raw, P_FLOOR, 1.0)


def leveraged_mask(lev: LeverageProfile, r: int, n: int,
                   multiplier: float = DEFAULT_MULTIPLIER, seed=None) -> SamplingMask:
    """Leverage-adapted Bernoulli mask (see :func:`leveraged_probs`)."""
    return mask_from_probs(leveraged_probs(lev, r, n, multiplier), seed)


def _check_shape(M, mask: SamplingMask):
    M = np.asarray(M, dtype=float)
    if M.shape != mask.shape:
        raise InvalidInputError(f"matrix shape {M.shape} does not match mask {mask.shape}")
    return M


def apply_Rp(M, mask: SamplingMask) -> np.ndarray:
    """R_p(M)[i, j] = eps_ij M[i, j] / p_ij."""
    M = _check_shape(M, mask)
    return np.where(mask.indicators, M / mask.probs, 0.0)


def apply_Pp(M, mask: SamplingMask) -> np.ndarray:
    """P_p(M)[i, j] = eps_ij M[i, j]."""
    M = _check_shape(M, mask)
    return np.where(mask.indicators, M, 0.0)


def _check_frame(B, name):
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise InvalidFrameError(f"{name} must be square")
    if np.linalg.norm(B.T @ B - np.eye(B.shape[0])) > 1e-8:
        raise InvalidFrameError(f"{name} is not orthonormal")
    return B


def rotated_Rp(Zbar, mask: SamplingMask, B_L, B_R) -> np.ndarray:
    """B_L^T R_p(B_L Zbar B_R^T) B_R."""
    B_L = _check_frame(B_L, "B_L")
    B_R = _check_frame(B_R, "B_R")
    return B_L.T @ apply_Rp(B_L @ np.asarray(Zbar, dtype=float) @ B_R.T, mask) @ B_R


def rotated_Pp(Zbar, mask: SamplingMask, B_L, B_R) -> np.ndarray:
    """B_L^T P_p(B_L Zbar B_R^T) B_R."""
    B_L = _check_frame(B_L, "B_L")
    B_R = _check_frame(B_R, "B_R")
    return B_L.T @ apply_Pp(B_L @ np.asarray(Zbar, dtype=float) @ B_R.T, mask) @ B_R


@dataclass(frozen=True)
class GaussianEnsemble:
    """m sensing matrices with i.i.d. N(0, 1/m) entries, stored as (m, n*n)."""

    G: np.ndarray
    n: int
    seed: Optional[int] = None

    @property
    def m(self) -> int:
        return self.G.shape[0]

    def matrices(self) -> np.ndarray:
        return self.G.reshape(self.m, self.n, self.n)


def gaussian_ensemble(m: int, n: int, seed) -> GaussianEnsemble:
    if m < 1 or n < 1:
        raise InvalidInputError("need m >= 1 and n >= 1")
    G = _rng(seed).standard_normal((m, n * n)) / np.sqrt(m)
    return GaussianEnsemble(G, n, seed)


def gaussian_measure(M, ens: GaussianEnsemble) -> np.ndarray:
    """y_k = <G_k, M>."""
    M = np.asarray(M, dtype=float)
    if M.shape != (ens.n, ens.n):
        raise InvalidInputError(f"matrix shape {M.shape} does not match ensemble side {ens.n}")
    return ens.G @ M.ravel()


def gaussian_adjoint(y, ens: GaussianEnsemble) -> np.ndarray:
    """sum_k y_k G_k."""
    return (np.asarray(y, dtype=float) @ ens.G).reshape(ens.n, ens.n)


def estimate_rip(ens: GaussianEnsemble, r: int, trials: int, seed) -> float:
    """Empirical RIP deviation over random rank-r unit-Frobenius matrices.

    Returns ``max |‖R_m(X)‖_2 - 1|`` over the sampled X.  Sampling can
    only find a lower bound on the true restricted isometry constant.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    rng = _rng(seed)
    n = ens.n
    worst = 0.0
    for _ in range(trials):
        X = rng.standard_normal((n, r)) @ rng.standard_normal((r, n))
        X /= np.linalg.norm(X)
        worst = max(worst, abs(np.linalg.norm(gaussian_measure(X, ens)) - 1.0))
    return float(worst)


def operator_norm(apply, n: int, seed=0, tol: float = 1e-6, max_iter: int = 500,
                  project=None) -> PowerResult:
    """Power-iteration norm of a self-adjoint map on n x n matrices."""
    start = _rng(seed).standard_normal((n, n))
    return power_norm(apply, start, tol=tol, max_iter=max_iter, project=project)
