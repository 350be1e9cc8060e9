"""Recover one low-rank matrix from a subsample, with and without its prior.

A 20 x 20 rank-4 matrix and a noisy copy M' are drawn; the column and row
spaces of M' serve as the prior.  At each sampling rate the same mask is
handed to standard and weighted nuclear-norm minimisation.
"""

from priormc.experiments import InstanceSpec, generate_instance
from priormc.prior import make_weight
from priormc.sampling import apply_Rp, uniform_mask
from priormc.solvers import solve_standard_completion, solve_weighted_completion

inst = generate_instance(InstanceSpec(n=20, r=4, prior_noise_var=1e-4, seed=7))
print(f"largest principal angles of the prior: u={inst.u:.3f} v={inst.v:.3f}")

QU, QV = make_weight(inst.U_tilde, 0.1), make_weight(inst.V_tilde, 0.1)
print("  p   standard   weighted(w=0.1)")
for p in (0.3, 0.4, 0.5, 0.6, 0.7, 0.8):
    mask = uniform_mask(inst.n, p, seed=11)
    Y = apply_Rp(inst.M, mask)
    std = solve_standard_completion(Y, mask, truth=inst.M)
    wtd = solve_weighted_completion(Y, mask, QU, QV, truth=inst.M)
    print(f"{p:4.1f}   {std.relative_error:8.1e}   {wtd.relative_error:8.1e}")

# relative error below 1e-3 counts as exact recovery
