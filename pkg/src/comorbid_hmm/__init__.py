"""Coupled hidden Markov model for two interacting disease processes.

Global states are the Cartesian product of the per-disease states; the
global chain has covariate-dependent multinomial-logit transitions and
normal emissions. Estimation is Bayesian via an in-package NUTS sampler.
"""
from .compare import CompareReport, fit_variants, psis_loo, waic
from .data import (CovariateSpec, PanelDataset, PatientSeries, SimulationConfig, center_within,
                   demo_simulation_config, derive_covariates, lag_covariate, load_panel,
                   simulate_dataset, write_panel)
from .errors import DataError, InitializationError, NumericalError, ValidationError
from .fitting import FitResult, fit_model
from .inference import (conditional_transition_summary, decode_table, mean_profile,
                        posterior_mean_params, posterior_predictive, spillover, viterbi)
from .kernels import BACKEND
from .likelihood import (LogPosterior, ModelConfig, PointwiseLogLik, brute_force_loglik,
                         forward_loglik, forward_loglik_patient, grad_log_posterior,
                         pointwise_loglik, total_log_posterior)
from .model import (Parameters, StateSpace, build_eta, emission_logpdf, global_index,
                    split_global, transition_matrix)
from .sampler import ChainConfig, Diagnostics, Draws, initialize_chains, nuts_sample
from .diagnostics import compute_ess, compute_rhat
from .transforms import QRBasis, Transform, constrain, log_prior, qr_reparam, unconstrain

__version__ = "0.1.0"
