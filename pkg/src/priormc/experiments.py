"""Phase-transition experiments.

Random instances with noisy prior subspaces, Monte Carlo sweeps over the
sampling rate (entry sampling) or the measurement count (Gaussian
measurements), success-rate curves with Wilson intervals and the CSV
formats used to archive them.

Every random draw is derived from the master seed and the cell
coordinates through ``numpy.random.SeedSequence``, so a record depends
only on (master seed, p index, trial) and never on which other cells ran
or in which order workers finished.
"""
import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binomtest

from .matgeom import InvalidInputError, principal_angles
from .prior import canonical_decomposition, coherence, leverage_scores, make_weight
from .sampling import apply_Rp, gaussian_ensemble, gaussian_measure, uniform_mask
from .solvers import (SUCCESS_TOL, SolveResult, SolverConfig, baseline_diagonal, baseline_rnnh,
                      baseline_wls, iterative_reweighted, perfect_prior_least_squares,
                      solve_standard, solve_weighted)
from .theory import PriorQuality, constants, nullspace_audit

DEFAULT_P_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
# row-spike factor giving a largest leverage score near 4 for n=20, r=4
DEFAULT_SPIKE = 4.0

# seed streams below one cell seed
_INSTANCE, _MASK = 0, 1


def derive_seed(*key) -> int:
    """64-bit seed from a master seed followed by integer coordinates."""
    master, rest = int(key[0]), tuple(int(k) for k in key[1:])
    ss = np.random.SeedSequence(entropy=master, spawn_key=rest)
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class InstanceSpec:
    """Parameters of a random test matrix and its prior.

    Attributes
    ----------
    n, r : int
        Side length and rank, ``1 <= r <= n/2``.
    prior_noise_var : float
        Variance of the i.i.d. Gaussian perturbation N in M' = M + N.
    coherent : bool
        Scale one row of each basis generator by ``spike`` before
        orthogonalising, which concentrates leverage on that row.
    seed : int
    """

    n: int = 20
    r: int = 4
    prior_noise_var: float = 1e-4
    coherent: bool = False
    seed: int = 0
    spike: float = DEFAULT_SPIKE

    def __post_init__(self):
        if not (1 <= self.r <= self.n / 2):
            raise InvalidInputError(f"need 1 <= r <= n/2, got n={self.n}, r={self.r}")
        if self.prior_noise_var < 0 or not math.isfinite(self.prior_noise_var):
            raise InvalidInputError("prior noise variance must be finite and nonnegative")
        if self.spike <= 0:
            raise InvalidInputError("spike must be positive")


@dataclass(frozen=True)
class Instance:
    M: np.ndarray
    U: np.ndarray
    V: np.ndarray
    U_tilde: np.ndarray
    V_tilde: np.ndarray
    M_prime: np.ndarray
    u: float
    v: float
    max_leverage: float
    spec: InstanceSpec

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def r(self) -> int:
        return self.U.shape[1]


def _haar(rng, n, r, spike):
    G = rng.standard_normal((n, r))
    if spike is not None:
        G[0] *= spike
    Q, R = np.linalg.qr(G)
    # sign fix makes the draw Haar distributed
    return Q * np.sign(np.diag(R))


def generate_instance(spec: InstanceSpec) -> Instance:
    """M = U V^T / ||U V^T||_F with random bases, prior from the SVD of M + N."""
    rng = np.random.default_rng(spec.seed)
    n, r = spec.n, spec.r
    spike = spec.spike if spec.coherent else None
    U = _haar(rng, n, r, spike)
    V = _haar(rng, n, r, spike)
    M = U @ V.T
    M /= np.linalg.norm(M)
    N = rng.standard_normal((n, n)) * math.sqrt(spec.prior_noise_var)
    Mp = M + N
    A, _, Bt = np.linalg.svd(Mp)
    Ut, Vt = A[:, :r], Bt[:r].T
    u = float(principal_angles(U, Ut)[0])
    v = float(principal_angles(V, Vt)[0])
    return Instance(M, U, V, Ut, Vt, Mp, u, v, coherence(U, V), spec)


# algorithms ------------------------------------------------------------------

ALGORITHMS = ("standard", "weighted", "diagonal", "wls", "rnnh", "irw", "irnn", "perfect")
_PARAM = {"weighted": "w", "wls": "gamma", "rnnh": "delta", "irw": "iterations",
          "irnn": "iterations"}


@dataclass(frozen=True)
class AlgorithmSpec:
    """An algorithm and its tuning parameter.

    ``w`` is used by weighted and IRW, ``delta`` by RNNH and IRNN, ``gamma``
    by WLS; ``iterations`` counts the weighted re-solves of IRW/IRNN.
    """

    name: str
    w: Optional[float] = None
    delta: Optional[float] = None
    gamma: Optional[float] = None
    iterations: Optional[int] = None

    def __post_init__(self):
        if self.name not in ALGORITHMS:
            raise InvalidInputError(f"unknown algorithm {self.name!r}")
        defaults = {"weighted": ("w", 0.1), "wls": ("gamma", 0.1), "rnnh": ("delta", 0.01),
                    "irw": ("w", 0.1), "irnn": ("delta", 0.01)}
        if self.name in defaults:
            k, v = defaults[self.name]
            if getattr(self, k) is None:
                object.__setattr__(self, k, v)
        if self.name in ("irw", "irnn") and self.iterations is None:
            object.__setattr__(self, "iterations", 1)
        if self.w is not None and not (0 < self.w <= 1):
            raise InvalidInputError(f"weight must lie in (0, 1], got {self.w}")
        for k in ("delta", "gamma"):
            val = getattr(self, k)
            if val is not None and not val > 0:
                raise InvalidInputError(f"{k} must be positive, got {val}")
        if self.iterations is not None and self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")

    @property
    def param_name(self) -> str:
        return _PARAM.get(self.name, "")

    @property
    def param_value(self) -> float:
        k = self.param_name
        return float(getattr(self, k)) if k else float("nan")

    @property
    def label(self) -> str:
        if self.name == "irw":
            return f"IRW({self.iterations}) w={self.w:g}"
        if self.name == "irnn":
            return f"IRNN({self.iterations}) delta={self.delta:g}"
        k = self.param_name
        return f"{self.name} {k}={self.param_value:g}" if k else self.name

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class TrialRecord:
    """Outcome of one algorithm on one (p, trial) cell.

    ``converged`` and ``nsp_slack`` are diagnostics that are not part of
    the CSV format; ``nsp_slack`` is NaN unless audited.
    """

    algorithm: str
    param_name: str
    param_value: float
    n: int
    r: int
    sigma2: float
    p_or_m: float
    trial: int
    seed: int
    rel_error: float
    success: bool
    iterations: int
    wall_ms: float = 0.0
    converged: bool = True
    nsp_slack: float = float("nan")

    CSV_COLUMNS = ("algorithm", "param_name", "param_value", "n", "r", "sigma2", "p_or_m",
                   "trial", "seed", "rel_error", "success", "iterations", "wall_ms")

    def csv_fields(self):
        return [self.algorithm, self.param_name, _fmt(self.param_value), self.n, self.r,
                _fmt(self.sigma2), _fmt(self.p_or_m), self.trial, self.seed,
                _fmt(self.rel_error), int(self.success), self.iterations, _fmt(self.wall_ms)]


def _fmt(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


# one cell --------------------------------------------------------------------

@dataclass(frozen=True)
class _Job:
    kind: str
    spec: InstanceSpec
    algorithms: Tuple[AlgorithmSpec, ...]
    p_index: int
    p: float
    trial: int
    master: int
    cfg: SolverConfig
    fixed_instance: bool
    audit: bool
    timing: bool


def _audit(inst: Instance, w: float, res: SolveResult) -> float:
    frames = (canonical_decomposition(inst.U, inst.U_tilde, w),
              canonical_decomposition(inst.V, inst.V_tilde, w))
    c = constants(PriorQuality.from_frames(*frames))
    return nullspace_audit(res.X_hat - inst.M, frames, c, 0.0).slack


def _run_cell(job: _Job) -> List[TrialRecord]:
    cell_seed = derive_seed(job.master, job.trial, job.p_index)
    if job.fixed_instance:
        inst_seed = derive_seed(job.master)
    else:
        inst_seed = derive_seed(cell_seed, _INSTANCE)
    spec = InstanceSpec(job.spec.n, job.spec.r, job.spec.prior_noise_var, job.spec.coherent,
                        inst_seed, job.spec.spike)
    inst = generate_instance(spec)
    n, M = inst.n, inst.M
    mask_seed = derive_seed(cell_seed, _MASK)
    if job.kind == "completion":
        sampler = uniform_mask(n, job.p, mask_seed)
        data = apply_Rp(M, sampler)
        p_or_m = job.p
    else:
        m = int(round(job.p * n * n))
        sampler = gaussian_ensemble(max(m, 1), n, mask_seed)
        data = gaussian_measure(M, sampler)
        p_or_m = float(max(m, 1))
    cfg = job.cfg

    cache: Dict = {}

    def standard():
        if "standard" not in cache:
            cache["standard"] = solve_standard(data, sampler, cfg, M)
        return cache["standard"]

    def iterative(variant, par, iters):
        key = (variant, par)
        have = cache.get(key)
        if have is None or len(have.info["history"]) < iters:
            kw = {"w": par} if variant == "IRW" else {"delta": par}
            cache[key] = iterative_reweighted(data, sampler, variant, iters, inst.r, cfg, M,
                                              init=standard(), **kw)
        return cache[key].info["history"][iters - 1]

    # run the longest iterative chain first so shorter ones read its history
    longest: Dict = {}
    for a in job.algorithms:
        if a.name in ("irw", "irnn"):
            key = (a.name, a.w if a.name == "irw" else a.delta)
            longest[key] = max(longest.get(key, 0), a.iterations)

    out = []
    for a in job.algorithms:
        t0 = time.perf_counter()
        slack = float("nan")
        try:
            if a.name == "standard":
                res = standard()
            elif a.name == "weighted":
                QU, QV = make_weight(inst.U_tilde, a.w), make_weight(inst.V_tilde, a.w)
                res = solve_weighted(data, sampler, QU.matrix, QV.matrix, cfg, M,
                                     WL_inv=QU.inverse, WR_inv=QV.inverse)
                if job.audit and res.converged and cfg.noise_level == 0:
                    slack = _audit(inst, a.w, res)
            elif a.name == "diagonal":
                res = baseline_diagonal(data, sampler, leverage_scores(inst.U_tilde, inst.V_tilde), cfg, M)
            elif a.name == "wls":
                res = baseline_wls(data, sampler, inst.M_prime, a.gamma, cfg, M)
            elif a.name == "rnnh":
                res = baseline_rnnh(data, sampler, inst.M_prime, a.delta, cfg, M)
            elif a.name == "perfect":
                res = perfect_prior_least_squares(data, sampler, inst.U, inst.V, M)
            else:
                variant = a.name.upper()
                par = a.w if a.name == "irw" else a.delta
                iterative(variant, par, longest[(a.name, par)])
                res = iterative(variant, par, a.iterations)
            rel, its, conv = res.relative_error, res.iterations, res.converged
        except InvalidInputError:
            # e.g. an underdetermined least-squares fit: a failed trial
            rel, its, conv = float("inf"), 0, False
        wall = (time.perf_counter() - t0) * 1e3 if job.timing else 0.0
        out.append(TrialRecord(a.name, a.param_name, a.param_value if a.param_name else float("nan"),
                               n, inst.r, job.spec.prior_noise_var, p_or_m, job.trial, cell_seed,
                               rel, bool(rel <= SUCCESS_TOL), int(its), wall, bool(conv), slack))
    return out


def _threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("PRIORMC_THREADS", "1") or 1)
    return max(1, int(threads))


def _sweep(kind, spec, algorithms, p_grid, trials, seed, cfg, threads, fixed_instance, audit,
           timing) -> List[TrialRecord]:
    algorithms = tuple(algorithms)
    p_grid = [float(p) for p in p_grid]
    if not algorithms:
        raise InvalidInputError("algorithm list is empty")
    if not p_grid or trials < 1:
        raise InvalidInputError("need a nonempty grid and at least one trial")
    for p in p_grid:
        if not (0 < p <= 1):
            raise InvalidInputError(f"grid value {p} outside (0, 1]")
    jobs = [_Job(kind, spec, algorithms, i, p, t, int(seed), cfg, fixed_instance, audit, timing)
            for i, p in enumerate(p_grid) for t in range(trials)]
    nthreads = _threads(threads)
    if nthreads == 1:
        results = [_run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=nthreads) as ex:
            results = list(ex.map(_run_cell, jobs, chunksize=1))
    # deterministic (algorithm, p, trial) order regardless of scheduling
    order = {a: k for k, a in enumerate(algorithms)}
    flat = [(order[a], j.p_index, j.trial, rec) for j, recs in zip(jobs, results)
            for a, rec in zip(algorithms, recs)]
    flat.sort(key=lambda x: x[:3])
    return [x[3] for x in flat]


def run_sweep(spec: InstanceSpec, algorithms: Sequence[AlgorithmSpec], p_grid=DEFAULT_P_GRID,
              trials: int = 50, seed: int = 0, cfg: SolverConfig = SolverConfig(),
              threads: Optional[int] = None, fixed_instance: bool = False, audit: bool = False,
              timing: bool = False) -> List[TrialRecord]:
    """Completion sweep over the sampling rates in ``p_grid``.

    Each (p, trial) cell draws a fresh instance (unless ``fixed_instance``)
    and a fresh uniform mask; all algorithms of the cell share them and the
    standard solve is reused as the IRW/IRNN initialisation.  ``audit``
    attaches the nullspace-inequality slack to converged noiseless weighted
    solves.  ``timing`` fills ``wall_ms``; it is off by default so the
    CSV output is reproducible byte for byte.
    """
    return _sweep("completion", spec, algorithms, p_grid, trials, seed, cfg, threads,
                  fixed_instance, audit, timing)


def recovery_sweep(spec: InstanceSpec, algorithms: Sequence[AlgorithmSpec], p_grid=DEFAULT_P_GRID,
                   trials: int = 50, seed: int = 0, cfg: SolverConfig = SolverConfig(),
                   threads: Optional[int] = None, fixed_instance: bool = False,
                   timing: bool = False) -> List[TrialRecord]:
    """Sweep with m = round(p n^2) Gaussian measurements in place of entry sampling."""
    if any(a.name == "diagonal" for a in algorithms):
        raise InvalidInputError("the diagonal baseline is defined for entry sampling only")
    return _sweep("recovery", spec, algorithms, p_grid, trials, seed, cfg, threads,
                  fixed_instance, False, timing)


# summaries ---------------------------------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    algorithm: str
    param_name: str
    param_value: float
    p_or_m: float
    trials: int
    successes: int
    rate: float
    lo: float
    hi: float

    CSV_COLUMNS = ("algorithm", "param_name", "param_value", "p_or_m", "trials", "successes",
                   "rate", "ci_low", "ci_high")

    @property
    def key(self) -> Tuple[str, str, float]:
        return (self.algorithm, self.param_name, self.param_value)

    def csv_fields(self):
        return [self.algorithm, self.param_name, _fmt(self.param_value), _fmt(self.p_or_m),
                self.trials, self.successes, _fmt(self.rate), _fmt(self.lo), _fmt(self.hi)]


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def success_curve(records: Sequence[TrialRecord]) -> List[CurvePoint]:
    """Success rate with a Wilson 95% interval per (algorithm, parameter, p)."""
    if not records:
        raise InvalidInputError("no records to summarise")
    groups: Dict = {}
    for rec in records:
        pv = rec.param_value
        key = (rec.algorithm, rec.param_name, "nan" if math.isnan(pv) else pv, rec.p_or_m)
        groups.setdefault(key, []).append(rec.success)
    out = []
    for (alg, pn, pv, p), flags in groups.items():
        k, n = int(sum(flags)), len(flags)
        lo, hi = wilson_interval(k, n)
        out.append(CurvePoint(alg, pn, float(pv), p, n, k, k / n, lo, hi))
    return out


def rates(points: Sequence[CurvePoint], algorithm: str, param_value=None) -> Dict[float, float]:
    """Map p -> success rate for one curve."""
    sel = {}
    for pt in points:
        if pt.algorithm != algorithm:
            continue
        if param_value is not None and not math.isclose(pt.param_value, param_value):
            continue
        sel[pt.p_or_m] = pt.rate
    return dict(sorted(sel.items()))


def records_csv(records: Sequence[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TrialRecord.CSV_COLUMNS)
    for rec in records:
        w.writerow(rec.csv_fields())
    return buf.getvalue()


def curves_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CurvePoint.CSV_COLUMNS)
    for pt in points:
        w.writerow(pt.csv_fields())
    return buf.getvalue()


def read_records_csv(text: str) -> List[TrialRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != TrialRecord.CSV_COLUMNS:
        raise InvalidInputError("unexpected records header")
    out = []
    for r in rows[1:]:
        out.append(TrialRecord(r[0], r[1], float(r[2]), int(r[3]), int(r[4]), float(r[5]),
                               float(r[6]), int(r[7]), int(r[8]), float(r[9]), bool(int(r[10])),
                               int(r[11]), float(r[12])))
    return out


# presets -------------------------------------------------------------------------

W_GRID = (0.01, 0.03, 0.1, 0.3, 1.0)
DELTA_GRID = (0.001, 0.01, 0.1, 0.3, 1.0)


def _fig_a(sigma2, w, delta, **extra):
    algs = [{"name": "standard"}, {"name": "weighted", "w": w}, {"name": "diagonal"},
            {"name": "wls", "gamma": 0.1}, {"name": "rnnh", "delta": delta}]
    cfg = {"kind": "completion", "instance": {"n": 20, "r": 4, "sigma2": sigma2},
           "algorithms": algs, "p_grid": list(DEFAULT_P_GRID), "trials": 50, "seed": 0}
    cfg.update(extra)
    return cfg


def _fig_b(sigma2):
    algs = [{"name": "standard"}] + [{"name": "weighted", "w": w} for w in W_GRID]
    return {"kind": "completion", "instance": {"n": 20, "r": 4, "sigma2": sigma2},
            "algorithms": algs, "p_grid": list(DEFAULT_P_GRID), "trials": 50, "seed": 0}


def _fig_c(sigma2):
    algs = [{"name": "standard"}] + [{"name": "rnnh", "delta": d} for d in DELTA_GRID]
    return {"kind": "completion", "instance": {"n": 20, "r": 4, "sigma2": sigma2},
            "algorithms": algs, "p_grid": list(DEFAULT_P_GRID), "trials": 50, "seed": 0}


def _presets() -> Dict[str, dict]:
    P = {
        "fig1": _fig_a(1e-4, 0.1, 0.01),
        "fig1b": _fig_b(1e-4),
        "fig1c": _fig_c(1e-4),
        "fig2": _fig_a(1e-6, 0.03, 0.001),
        "fig2b": _fig_b(1e-6),
        "fig2c": _fig_c(1e-6),
        "fig3": _fig_a(2.5e-3, 0.3, 0.1),
        "fig3b": _fig_b(2.5e-3),
        "fig3c": _fig_c(2.5e-3),
        "fig4": {"kind": "recovery", "instance": {"n": 20, "r": 4, "sigma2": 1e-4},
                 "algorithms": [{"name": "standard"}, {"name": "weighted", "w": 0.3},
                                {"name": "wls", "gamma": 0.1}, {"name": "rnnh", "delta": 0.01}],
                 "p_grid": [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0], "trials": 50, "seed": 0},
        "fig5": _fig_a(1e-4, 0.1, 0.01, instance={"n": 20, "r": 2, "sigma2": 1e-4}),
        "fig6": _fig_a(1e-4, 0.1, 0.01, instance={"n": 20, "r": 4, "sigma2": 1e-4,
                                                  "coherent": True}),
        "fig7": _fig_a(1e-4, 0.1, 0.01, instance={"n": 40, "r": 4, "sigma2": 1e-4}),
        "fig8": {"kind": "completion", "instance": {"n": 20, "r": 4, "sigma2": 0.0},
                 "algorithms": [{"name": "irw", "w": 0.1, "iterations": 1},
                                {"name": "irw", "w": 0.1, "iterations": 4},
                                {"name": "irnn", "delta": 0.01, "iterations": 1},
                                {"name": "irnn", "delta": 0.01, "iterations": 4}],
                 "p_grid": list(DEFAULT_P_GRID), "trials": 50, "seed": 0},
    }
    # the later figures of the results section repeat figs 4-8 under their
    # own numbers
    for a, b in zip(("fig9", "fig10", "fig11", "fig12", "fig13"),
                    ("fig4", "fig5", "fig6", "fig7", "fig8")):
        P[a] = dict(P[b])
    for k, v in P.items():
        v["name"] = k
    return P


PRESETS = _presets()
