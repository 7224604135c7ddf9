"""Sparse EM estimation for latent-variable linear regressions with lq priors."""
from .model import (LatentDynamics, ParameterEstimate, ProblemSpec, complete_loglik,
                    design_matrix, design_row, estimate_mse)
from .penalty import (PenaltySpec, build_K, implied_lambda_inv_expectation, kappa_weight,
                      log_prior, lq_log_prior, lq_prox, lq_scalar_prox)
from .simulator import Dataset, SimConfig, simulate, simulate_fully_observed
from .smoother import (GridSpec, LatentPosterior, MomentSet, build_grid, compute_moments,
                       e_step, forward_backward, smooth)
from .solvers import (EmTrace, SolverError, SolverOptions, default_init, ecm_cd_step,
                      em_ml_step, map_em_step, run_estimator, zero_lock)

__version__ = "0.1.0"
