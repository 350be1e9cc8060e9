"""Closed-form constants of the weighted recovery and completion guarantees.

The constants depend on the prior quality only through the largest
principal angles (u, v) and the weights (lambda, rho).  Besides their
evaluation this module provides the RIP threshold, the sampling-rate
bound for completion, the weight minimising C4 and an audit of the
nullspace-type inequality satisfied by solver errors.
"""
import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .matgeom import InvalidInputError, nuclear_norm
from .prior import CanonicalFrame


@dataclass(frozen=True)
class PriorQuality:
    """Largest principal angles and weights for the two sides.

    Attributes
    ----------
    u, v : float
        Largest left and right principal angles in [0, pi/2].
    lam, rho : float
        Left and right weights in (0, 1].
    """

    u: float
    v: float
    lam: float
    rho: float

    def __post_init__(self):
        for name in ("u", "v"):
            a = float(getattr(self, name))
            if not (0.0 <= a <= math.pi / 2 + 1e-12) or not math.isfinite(a):
                raise InvalidInputError(f"angle {name}={a} outside [0, pi/2]")
        for name in ("lam", "rho"):
            w = float(getattr(self, name))
            if not (0.0 < w <= 1.0) or not math.isfinite(w):
                raise InvalidInputError(f"weight {name}={w} outside (0, 1]")

    @classmethod
    def from_frames(cls, left: CanonicalFrame, right: CanonicalFrame) -> "PriorQuality":
        return cls(left.largest_angle, right.largest_angle, left.weight, right.weight)


@dataclass(frozen=True)
class TheoryConstants:
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.c1, self.c2, self.c3, self.c4, self.c5)


def _side(theta: float, w: float):
    c2, s2 = math.cos(theta) ** 2, math.sin(theta) ** 2
    den = w ** 2 * c2 + s2
    return {
        "a": math.sqrt((w ** 4 * c2 + s2) / den),
        "b": math.sqrt(2.0 * (1.0 - w ** 2) * s2 / den),
        "g": 3.0 * math.sqrt(1.0 - w ** 2) * math.sqrt(s2) / (2.0 * math.sqrt(den)),
        "den": den,
        "top": math.sqrt(w ** 4 * c2 + s2),
    }


def constants(q: PriorQuality) -> TheoryConstants:
    """Evaluate C1..C5 for the given angles and weights."""
    L = _side(q.u, q.lam)
    R = _side(q.v, q.rho)
    c1 = L["a"] + R["a"]
    c2 = L["b"] + R["b"]
    c3 = L["g"] + R["g"]
    c4 = L["a"] * R["a"]
    c5 = ((math.sqrt(L["den"] / R["den"]) + math.sqrt(R["den"] / L["den"]))
          * (L["top"] + R["top"]))
    return TheoryConstants(c1, c2, c3, c4, c5)


def rip_threshold(c: TheoryConstants) -> float:
    """(0.9 - m/sqrt(30)) / (0.9 + m/sqrt(30)) with m = max(C1, C2).

    A negative value means no RIP constant can satisfy the condition; it is
    returned as is.
    """
    m = max(c.c1, c.c2) / math.sqrt(30.0)
    return (0.9 - m) / (0.9 + m)


@dataclass(frozen=True)
class CompletionBound:
    """Sampling-rate requirement for weighted completion.

    ``value`` is the clamped requirement in (0, 1]; ``unclamped`` the raw
    product; ``c3_ok`` whether the side condition C3 <= 1/8 holds.
    """

    value: float
    unclamped: float
    log_factor: float
    c3: float
    c3_ok: bool


def completion_probability_bound(q: PriorQuality, eta: float, eta_breve: float, r: int, n: int,
                                 constant: float = 1.0) -> CompletionBound:
    """constant * max(log(C4 n), 1) * (eta r log n / n) * max(C5 (1 + sqrt(eta_breve/eta)), 1).

    The universal constant hidden in the guarantee is exposed as
    ``constant`` (default 1).
    """
    if eta < 1.0 or n < 2 or r < 1 or eta_breve <= 0 or constant <= 0:
        raise InvalidInputError("need eta >= 1, eta_breve > 0, r >= 1, n >= 2, constant > 0")
    c = constants(q)
    log_factor = max(math.log(c.c4 * n), 1.0) if c.c4 > 0 else 1.0
    raw = (constant * log_factor * eta * r * math.log(n) / n
           * max(c.c5 * (1.0 + math.sqrt(eta_breve / eta)), 1.0))
    value = min(raw, 1.0)
    return CompletionBound(value, raw, log_factor, c.c3, bool(c.c3 <= 0.125))


@dataclass(frozen=True)
class OptimalWeight:
    value: float
    degenerate: bool


def optimal_weight(theta: float, target: str = "completion") -> OptimalWeight:
    """Weight minimising C4 for u = v = theta (same formula for both targets).

    lambda^2 = sqrt(tan^4 + tan^2) - tan^2.  At theta = 0 the minimiser is
    the excluded weight 0 and at theta = pi/2 it tends to 1; both are
    returned with ``degenerate=True``.
    """
    if target not in ("recovery", "completion"):
        raise InvalidInputError(f"unknown target {target!r}")
    theta = float(theta)
    if not math.isfinite(theta) or theta < 0.0 or theta > math.pi / 2 + 1e-12:
        raise InvalidInputError(f"angle {theta} outside [0, pi/2]")
    if theta == 0.0:
        return OptimalWeight(0.0, True)
    if theta >= math.pi / 2:
        return OptimalWeight(1.0, True)
    t = math.tan(theta)
    # sqrt(t^4 + t^2) - t^2 = t / (t + sqrt(t^2 + 1)), free of cancellation
    lam2 = t / (t + math.sqrt(t * t + 1.0))
    return OptimalWeight(math.sqrt(lam2), False)


# nullspace-property audit ----------------------------------------------------

def _blocks(frame: CanonicalFrame):
    r, n = frame.r, frame.n
    return slice(0, r), slice(r, min(2 * r, n)), slice(min(2 * r, n), n)


def project_T_tilde(Z, left: CanonicalFrame, right: CanonicalFrame) -> np.ndarray:
    """Projection onto B_L [0, 0, 0; 0, Z22, Z23; 0, Z32, 0] B_R^T (three-block split)."""
    Zb = left.B.T @ np.asarray(Z, dtype=float) @ right.B
    _, l2, l3 = _blocks(left)
    _, r2, r3 = _blocks(right)
    out = np.zeros_like(Zb)
    out[l2, r2] = Zb[l2, r2]
    out[l2, r3] = Zb[l2, r3]
    out[l3, r2] = Zb[l3, r2]
    return left.B @ out @ right.B.T


def project_T_bar(Zb, r: int) -> np.ndarray:
    """Keep the (11), (12), (21) blocks of a matrix in rotated coordinates."""
    out = np.array(Zb, dtype=float)
    out[r:, r:] = 0.0
    return out


def project_T_bar_perp(Zb, r: int) -> np.ndarray:
    Zb = np.asarray(Zb, dtype=float)
    out = np.zeros_like(Zb)
    out[r:, r:] = Zb[r:, r:]
    return out


@dataclass(frozen=True)
class NullspaceReport:
    lhs: float
    t_term: float
    t_tilde_term: float
    residual_term: float
    slack: float

    def as_dict(self) -> Dict[str, float]:
        return {"lhs": self.lhs, "t_term": self.t_term, "t_tilde_term": self.t_tilde_term,
                "residual_term": self.residual_term, "slack": self.slack}


def nullspace_audit(H, frames: Tuple[CanonicalFrame, CanonicalFrame], c: TheoryConstants,
                    residual_nuc: float = 0.0) -> NullspaceReport:
    """Check ||P_Tperp H||_* <= C1 ||P_T H||_* + C2 ||P_Ttilde H||_* + 2 residual_nuc.

    T is the support of the truth, read from the first r columns of each
    frame.  ``residual_nuc`` is the nuclear norm of the weighted tail
    Q_U M_{r+} Q_V (zero for exactly low-rank truth).
    """
    left, right = frames
    H = np.asarray(H, dtype=float)
    if H.shape != (left.n, right.n):
        raise InvalidInputError(f"error matrix shape {H.shape} does not match frames")
    Hb = left.B.T @ H @ right.B
    r = left.r
    lhs = nuclear_norm(project_T_bar_perp(Hb, r))
    t_term = c.c1 * nuclear_norm(project_T_bar(Hb, r))
    tt_term = c.c2 * nuclear_norm(project_T_tilde(H, left, right))
    res_term = 2.0 * float(residual_nuc)
    return NullspaceReport(lhs, t_term, tt_term, res_term, t_term + tt_term + res_term - lhs)


# block bounds of the canonical factor ----------------------------------------

def frame_block_bounds(frame: CanonicalFrame) -> Dict[str, Tuple[float, float]]:
    """Norms of the triangular-factor blocks and their angle-based bounds.

    Each entry maps a name to ``(value, bound)``; for ``"L11"`` the bound
    is an equality.  Only the largest angle and the weight enter the bounds.
    """
    w = frame.weight
    u1 = frame.largest_angle
    c2, s2 = math.cos(u1) ** 2, math.sin(u1) ** 2
    den = w ** 2 * c2 + s2
    r = frame.r
    I = np.eye(r)
    L11, L12, L22 = frame.L11, frame.L12, frame.L22
    norm = lambda A: float(np.linalg.norm(A, 2)) if A.size else 0.0
    return {
        "L11": (norm(L11), math.sqrt(den)),
        "L12": (norm(L12), (1.0 - w ** 2) * math.sqrt(s2) / math.sqrt(den)),
        "I-L22": (norm(I - L22), math.sqrt(1.0 - w ** 2) * math.sqrt(s2) / math.sqrt(den)),
        "[L11 L12]^2": (norm(np.hstack([L11, L12])) ** 2, (w ** 4 * c2 + s2) / den),
        "[L22-I L12]^2": (norm(np.hstack([L22 - I, L12])) ** 2, 2.0 * (1.0 - w ** 2) * s2 / den),
    }
