"""Shared random-draw helpers for the tests."""
import numpy as np


def rand_basis(rng, n, d):
    Q, _ = np.linalg.qr(rng.standard_normal((n, d)))
    return Q


def tilted(rng, U, theta):
    """Basis whose principal angles with span(U) all equal theta."""
    n, r = U.shape
    C = np.linalg.qr(np.hstack([U, rng.standard_normal((n, r))]))[0][:, r:2 * r]
    return U * np.cos(theta) + C * np.sin(theta)


_SWEEPS = {}


def preset_points(name, trials, keep=None):
    """Records and curve points of a preset, cached for the test session.

    ``keep`` selects algorithms of the preset by index.  Cells are seeded
    by (trial, p index), so the first t trials of a longer run equal a
    t-trial run and callers may subset instead of re-running.
    """
    from priormc.experiments import (PRESETS, AlgorithmSpec, InstanceSpec, recovery_sweep,
                                     run_sweep)
    key = (name, trials, keep)
    if key not in _SWEEPS:
        cfg = PRESETS[name]
        inst = cfg["instance"]
        spec = InstanceSpec(n=inst["n"], r=inst["r"], prior_noise_var=inst["sigma2"],
                            coherent=inst.get("coherent", False))
        algs = [AlgorithmSpec(**a) for a in cfg["algorithms"]]
        if keep is not None:
            algs = [algs[i] for i in keep]
        if cfg["kind"] == "completion":
            recs = run_sweep(spec, algs, cfg["p_grid"], trials, cfg["seed"], audit=True)
        else:
            recs = recovery_sweep(spec, algs, cfg["p_grid"], trials, cfg["seed"])
        _SWEEPS[key] = recs
    return _SWEEPS[key]
