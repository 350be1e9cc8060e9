"""Low-rank matrix completion and recovery with subspace priors."""
from .matgeom import (InvalidInputError, SubspaceBasis, SupportProjector, nuclear_norm,
                      principal_angles, project_T, project_T_perp, svd, truncate_rank)
from .prior import (LeverageProfile, canonical_decomposition, coherence, leverage_scores,
                    make_weight)
from .sampling import (GaussianEnsemble, SamplingMask, apply_Pp, apply_Rp, gaussian_ensemble,
                       gaussian_measure, leveraged_mask, uniform_mask)
from .solvers import (SolveResult, SolverConfig, baseline_diagonal, baseline_rnnh, baseline_wls,
                      iterative_reweighted, perfect_prior_least_squares, solve_standard_completion,
                      solve_standard_recovery, solve_weighted_completion, solve_weighted_recovery)
from .theory import PriorQuality, constants, optimal_weight, rip_threshold

__version__ = "0.1.0"
