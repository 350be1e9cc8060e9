"""Command-line interface.

Subcommands
-----------
solve    one instance, one algorithm; writes the recovered matrix and a JSON summary
sweep    success-rate sweep from a config or preset; records CSV, curves CSV, optional SVG
certify  dual-certificate campaign; campaign CSV
bounds   theory constants, RIP threshold, sampling bound and optimal weight as JSON
report   curves CSV (and optional SVG) from an existing records CSV

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
non-convergence (solve) or failed pass-rate threshold (certify).
"""
import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import certificate as cert
from .experiments import (DEFAULT_P_GRID, PRESETS, AlgorithmSpec, InstanceSpec, curves_csv,
                          derive_seed, generate_instance, read_records_csv, records_csv,
                          recovery_sweep, run_sweep, success_curve)
from .matgeom import InvalidInputError
from .prior import canonical_decomposition, leverage_scores, make_weight
from .sampling import apply_Rp, gaussian_ensemble, gaussian_measure, uniform_mask
from .solvers import (SolverConfig, baseline_diagonal, baseline_rnnh, baseline_wls,
                      iterative_reweighted, perfect_prior_least_squares, solve_standard,
                      solve_weighted)
from .theory import (PriorQuality, completion_probability_bound, constants, nullspace_audit,
                     optimal_weight, rip_threshold)

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 1, 2


class ConfigError(InvalidInputError):
    """Malformed or inconsistent configuration."""


# configuration -------------------------------------------------------------------

@dataclass(frozen=True)
class CertifyConfig:
    n: int = 80
    r: int = 2
    multiplier: float = cert.CALIBRATED_MULTIPLIER
    seeds: int = 20
    theta: float = 0.1
    weight: Optional[float] = None
    pass_rate: float = 0.9


@dataclass(frozen=True)
class RunConfig:
    """Everything a subcommand needs, parsed from one JSON document."""

    name: str = "run"
    kind: str = "completion"
    instance: InstanceSpec = InstanceSpec()
    fixed_instance: bool = False
    algorithms: tuple = ()
    p_grid: tuple = DEFAULT_P_GRID
    p: float = 0.5
    trials: int = 50
    seed: int = 0
    solver: SolverConfig = SolverConfig()
    timing: bool = False
    certify: CertifyConfig = CertifyConfig()

    def to_dict(self) -> dict:
        inst = self.instance
        return {
            "name": self.name,
            "kind": self.kind,
            "instance": {"n": inst.n, "r": inst.r, "sigma2": inst.prior_noise_var,
                         "coherent": inst.coherent, "spike": inst.spike},
            "fixed_instance": self.fixed_instance,
            "algorithms": [a.to_dict() for a in self.algorithms],
            "p_grid": list(self.p_grid),
            "p": self.p,
            "trials": self.trials,
            "seed": self.seed,
            "solver": asdict(self.solver),
            "timing": self.timing,
            "certify": asdict(self.certify),
        }


_TOP_KEYS = {f.name for f in fields(RunConfig)}
_INSTANCE_KEYS = {"n", "r", "sigma2", "coherent", "spike"}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


def config_from_dict(d: dict) -> RunConfig:
    _check_keys(d, _TOP_KEYS, "config")
    try:
        kind = d.get("kind", "completion")
        if kind not in ("completion", "recovery"):
            raise ConfigError(f"kind must be 'completion' or 'recovery', got {kind!r}")
        inst_d = d.get("instance", {})
        _check_keys(inst_d, _INSTANCE_KEYS, "instance")
        inst = InstanceSpec(n=int(inst_d.get("n", 20)), r=int(inst_d.get("r", 4)),
                            prior_noise_var=float(inst_d.get("sigma2", 1e-4)),
                            coherent=bool(inst_d.get("coherent", False)),
                            spike=float(inst_d.get("spike", InstanceSpec.spike)))
        algs = []
        for a in d.get("algorithms", []):
            _check_keys(a, {"name", "w", "delta", "gamma", "iterations"}, "algorithm")
            algs.append(AlgorithmSpec(**a))
        grid = tuple(float(p) for p in d.get("p_grid", DEFAULT_P_GRID))
        if not grid:
            raise ConfigError("p_grid is empty")
        for p in grid + (float(d.get("p", 0.5)),):
            if not (0 < p <= 1):
                raise ConfigError(f"sampling value {p} outside (0, 1]")
        sol = d.get("solver", {})
        _check_keys(sol, {f.name for f in fields(SolverConfig)}, "solver")
        cer = d.get("certify", {})
        _check_keys(cer, {f.name for f in fields(CertifyConfig)}, "certify")
        cer_cfg = CertifyConfig(**cer)
        if cer_cfg.seeds < 1 or cer_cfg.multiplier <= 0 or not (0 <= cer_cfg.pass_rate <= 1):
            raise ConfigError("certify needs seeds >= 1, multiplier > 0, pass_rate in [0, 1]")
        trials = int(d.get("trials", 50))
        if trials < 1:
            raise ConfigError("trials must be >= 1")
        seed = int(d.get("seed", 0))
        if seed < 0 or seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return RunConfig(name=str(d.get("name", "run")), kind=kind, instance=inst,
                         fixed_instance=bool(d.get("fixed_instance", False)),
                         algorithms=tuple(algs), p_grid=grid, p=float(d.get("p", 0.5)),
                         trials=trials, seed=seed, solver=SolverConfig(**sol),
                         timing=bool(d.get("timing", False)), certify=cer_cfg)
    except ConfigError:
        raise
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> RunConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(d)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical JSON: every field present, sorted keys, two-space indent."""
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"


def _load(args) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choose from {', '.join(sorted(PRESETS))}")
        d = dict(PRESETS[args.preset])
    elif args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        d = json.loads(text) if text.strip() else None
        if d is None:
            raise ConfigError("config file is empty")
    else:
        d = {}
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        d["trials"] = args.trials
    return config_from_dict(d)


def _outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def _write(path: str, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


# solve -------------------------------------------------------------------------------

def solve_from_config(cfg: RunConfig):
    """Run the single-cell problem described by ``cfg``.

    The instance and mask seeds are derived from ``cfg.seed``; the first
    algorithm in ``cfg.algorithms`` is used (standard when none is given).
    Returns ``(result, summary)``.
    """
    alg = cfg.algorithms[0] if cfg.algorithms else AlgorithmSpec("standard")
    spec = InstanceSpec(cfg.instance.n, cfg.instance.r, cfg.instance.prior_noise_var,
                        cfg.instance.coherent, derive_seed(cfg.seed, 0), cfg.instance.spike)
    inst = generate_instance(spec)
    M, n = inst.M, inst.n
    if cfg.kind == "completion":
        sampler = uniform_mask(n, cfg.p, derive_seed(cfg.seed, 1))
        data = apply_Rp(M, sampler)
    else:
        sampler = gaussian_ensemble(max(1, int(round(cfg.p * n * n))), n, derive_seed(cfg.seed, 1))
        data = gaussian_measure(M, sampler)
    sc = cfg.solver
    slack = None
    if alg.name == "standard":
        res = solve_standard(data, sampler, sc, M)
    elif alg.name == "weighted":
        QU, QV = make_weight(inst.U_tilde, alg.w), make_weight(inst.V_tilde, alg.w)
        res = solve_weighted(data, sampler, QU.matrix, QV.matrix, sc, M, QU.inverse, QV.inverse)
        frames = (canonical_decomposition(inst.U, inst.U_tilde, alg.w),
                  canonical_decomposition(inst.V, inst.V_tilde, alg.w))
        c = constants(PriorQuality.from_frames(*frames))
        slack = nullspace_audit(res.X_hat - M, frames, c, 0.0).slack
    elif alg.name == "diagonal":
        if cfg.kind != "completion":
            raise ConfigError("the diagonal baseline needs entry sampling")
        res = baseline_diagonal(data, sampler, leverage_scores(inst.U_tilde, inst.V_tilde), sc, M)
    elif alg.name == "wls":
        res = baseline_wls(data, sampler, inst.M_prime, alg.gamma, sc, M)
    elif alg.name == "rnnh":
        res = baseline_rnnh(data, sampler, inst.M_prime, alg.delta, sc, M)
    elif alg.name == "perfect":
        res = perfect_prior_least_squares(data, sampler, inst.U, inst.V, M)
    else:
        kw = {"w": alg.w} if alg.name == "irw" else {"delta": alg.delta}
        res = iterative_reweighted(data, sampler, alg.name.upper(), alg.iterations, inst.r, sc, M, **kw)
    summary = {
        "algorithm": alg.to_dict(),
        "kind": cfg.kind,
        "n": n,
        "r": inst.r,
        "sigma2": cfg.instance.prior_noise_var,
        "p": cfg.p,
        "seed": cfg.seed,
        "u": inst.u,
        "v": inst.v,
        "rel_error": res.relative_error,
        "success": res.success,
        "iterations": res.iterations,
        "primal_residual": res.primal_residual,
        "converged": res.converged,
        "nullspace_slack": slack,
    }
    return res, summary


def summary_json(summary: dict) -> str:
    return json.dumps(summary, sort_keys=True, indent=2) + "\n"


def matrix_csv(X) -> str:
    return "\n".join(",".join(repr(float(x)) for x in row) for row in np.asarray(X)) + "\n"


def cmd_solve(args) -> int:
    cfg = _load(args)
    out = _outdir(args.out)
    res, summary = solve_from_config(cfg)
    _write(os.path.join(out, f"{cfg.name}_matrix.csv"), matrix_csv(res.X_hat))
    _write(os.path.join(out, f"{cfg.name}_summary.json"), summary_json(summary))
    print(summary_json(summary), end="")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


# sweep / report ---------------------------------------------------------------

def run_config_sweep(cfg: RunConfig, threads: Optional[int] = None):
    if not cfg.algorithms:
        raise ConfigError("algorithm list is empty")
    spec = InstanceSpec(cfg.instance.n, cfg.instance.r, cfg.instance.prior_noise_var,
                        cfg.instance.coherent, cfg.seed, cfg.instance.spike)
    if cfg.kind == "completion":
        return run_sweep(spec, cfg.algorithms, cfg.p_grid, cfg.trials, cfg.seed, cfg.solver,
                         threads, cfg.fixed_instance, False, cfg.timing)
    return recovery_sweep(spec, cfg.algorithms, cfg.p_grid, cfg.trials, cfg.seed, cfg.solver,
                          threads, cfg.fixed_instance, cfg.timing)


def _curve_label(pt) -> str:
    if pt.param_name and not math.isnan(pt.param_value):
        return f"{pt.algorithm} {pt.param_name}={pt.param_value:g}"
    return pt.algorithm


def curves_svg(points, title: str = "", xlabel: str = "p") -> str:
    """Success rate against the sampling variable, one polyline per curve."""
    W, H, L, R, T, B = 560, 360, 60, 170, 30, 50
    curves = {}
    for pt in points:
        curves.setdefault(_curve_label(pt), []).append((pt.p_or_m, pt.rate))
    xs = [x for c in curves.values() for x, _ in c] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pw, ph = W - L - R, H - T - B
    sx = lambda x: L + (x - x0) / (x1 - x0) * pw
    sy = lambda y: T + (1.0 - y) * ph
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
               "#7f7f7f"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{L + pw / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{L}" y1="{T + ph}" x2="{L + pw}" y2="{T + ph}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{T + ph}" stroke="black"/>',
           f'<text x="{L + pw / 2:.1f}" y="{H - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
           f'<text x="16" y="{T + ph / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 16 {T + ph / 2:.1f})">success rate</text>']
    for k in range(6):
        y = k / 5
        out.append(f'<text x="{L - 6}" y="{sy(y) + 4:.1f}" text-anchor="end" font-size="10">{y:.1f}</text>')
    for xv in sorted(set(xs)):
        out.append(f'<text x="{sx(xv):.1f}" y="{T + ph + 14}" text-anchor="middle" '
                   f'font-size="10">{xv:g}</text>')
    for i, (label, pts) in enumerate(curves.items()):
        col = palette[i % len(palette)]
        pts = sorted(pts)
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{coords}"/>')
        ly = T + 14 * i + 8
        out.append(f'<line x1="{W - R + 10}" y1="{ly}" x2="{W - R + 30}" y2="{ly}" stroke="{col}"/>')
        out.append(f'<text x="{W - R + 34}" y="{ly + 4}" font-size="10">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _outdir(args.out)
    recs = run_config_sweep(cfg, args.threads)
    pts = success_curve(recs)
    _write(os.path.join(out, f"{cfg.name}_records.csv"), records_csv(recs))
    _write(os.path.join(out, f"{cfg.name}_curves.csv"), curves_csv(pts))
    if args.svg:
        xl = "p" if cfg.kind == "completion" else "m"
        _write(os.path.join(out, f"{cfg.name}.svg"), curves_svg(pts, cfg.name, xl))
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.records:
        raise ConfigError("report needs --records <csv>")
    try:
        with open(args.records) as fh:
            recs = read_records_csv(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read records: {exc}") from exc
    if not recs:
        raise ConfigError("records file has no rows")
    out = _outdir(args.out)
    stem = os.path.splitext(os.path.basename(args.records))[0]
    stem = stem[:-len("_records")] if stem.endswith("_records") else stem
    pts = success_curve(recs)
    _write(os.path.join(out, f"{stem}_curves.csv"), curves_csv(pts))
    if args.svg:
        _write(os.path.join(out, f"{stem}.svg"), curves_svg(pts, stem))
    for pt in pts:
        print(f"{_curve_label(pt):<28} {pt.p_or_m:<8g} {pt.rate:.2f} [{pt.lo:.2f}, {pt.hi:.2f}]")
    return EXIT_OK


# certify -------------------------------------------------------------------------

def cmd_certify(args) -> int:
    cfg = _load(args)
    cc = cfg.certify
    out = _outdir(args.out)
    seeds = [derive_seed(cfg.seed, k) for k in range(cc.seeds)]
    rows = cert.run_campaign(cc.n, cc.r, cc.multiplier, seeds, cc.theta, cc.weight)
    _write(os.path.join(out, f"{cfg.name}_certificate.csv"), cert.campaign_csv(rows))
    cert_rate = sum(r.passed and r.decay_ok for r in rows) / len(rows)
    iso_rate = sum(r.isometry <= 0.5 for r in rows) / len(rows)
    print(json.dumps({"certificate_pass_rate": cert_rate, "isometry_pass_rate": iso_rate,
                      "p": rows[0].p, "K": rows[0].K}, sort_keys=True))
    ok = cert_rate >= cc.pass_rate and iso_rate >= cc.pass_rate
    return EXIT_OK if ok else EXIT_NONCONVERGED


# bounds --------------------------------------------------------------------------

def bounds_report(u, v, lam, rho, n, r, eta=1.0, eta_breve=1.0, constant=1.0, theta=None) -> dict:
    q = PriorQuality(u, v, lam, rho)
    c = constants(q)
    b = completion_probability_bound(q, eta, eta_breve, r, n, constant)
    ow = optimal_weight(max(u, v) if theta is None else theta)
    return {
        "constants": {"c1": c.c1, "c2": c.c2, "c3": c.c3, "c4": c.c4, "c5": c.c5},
        "rip_threshold": rip_threshold(c),
        "rip_satisfiable": rip_threshold(c) > 0,
        "completion_bound": b.value,
        "completion_bound_unclamped": b.unclamped,
        "c3_ok": b.c3_ok,
        "optimal_weight": ow.value,
        "optimal_weight_degenerate": ow.degenerate,
    }


def cmd_bounds(args) -> int:
    try:
        rep = bounds_report(args.u, args.v, args.lam, args.rho, args.n, args.r, args.eta,
                            args.eta_breve, args.constant, args.theta)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    print(json.dumps(rep, sort_keys=True, indent=2))
    return EXIT_OK


# entry point -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="priormc", description="Weighted nuclear-norm completion with subspace priors")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--preset", help="built-in config name (fig1 ... fig13)")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("solve", help="solve one instance")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("sweep", help="success-rate sweep")
    common(sp)
    sp.add_argument("--threads", type=int, default=None,
                    help="worker processes (default: PRIORMC_THREADS or 1)")
    sp.add_argument("--trials", type=int, default=None, help="override the trial count")
    sp.add_argument("--svg", action="store_true", help="also write an SVG plot")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("certify", help="dual-certificate campaign")
    common(sp)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("bounds", help="theory constants as JSON")
    sp.add_argument("--u", type=float, required=True, help="largest left principal angle")
    sp.add_argument("--v", type=float, required=True, help="largest right principal angle")
    sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
    sp.add_argument("--rho", type=float, default=1.0)
    sp.add_argument("--n", type=int, default=20)
    sp.add_argument("--r", type=int, default=4)
    sp.add_argument("--eta", type=float, default=1.0)
    sp.add_argument("--eta-breve", dest="eta_breve", type=float, default=1.0)
    sp.add_argument("--constant", type=float, default=1.0)
    sp.add_argument("--theta", type=float, default=None,
                    help="angle for the optimal weight (default max(u, v))")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("report", help="curves from a records CSV")
    sp.add_argument("--records", help="records CSV written by sweep")
    sp.add_argument("--out", default="out")
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        sys.stderr.write("priormc: error: --threads must be >= 1\n")
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"priormc: error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
