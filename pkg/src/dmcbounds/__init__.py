"""Finite-blocklength log-volume bounds for discrete memoryless channels."""
from .capacity_solver import CapacityAnalysis, capacity_sets, dimensionality, saddlepoint_check, solve_capacity
from .channel_model import Dmc, Pmf, detect_lattice, is_weakly_symmetric, make_named_channel, parse_channel_spec
from .coding_sim import (CodeEnsembleSpec, SimResult, achievable_rate, bivariate_prefactor, simulate_random_code,
                         term2_estimate, union_bound_terms)
from .fisher_geometry import (FisherMatrices, GradientVectors, fisher_matrix, game_saddlepoint, gradient_vectors,
                              identity_audit, local_optimality_audit)
from .fourth_order_bounds import BoundsResult, a_eps_bounds, bsc_constants, log_volume_bracket, sweep
from .info_metrics import channel_moments, divergence_moments, f_eps, q_inv, zeta_hat_n, zeta_n
from .np_testing import ProductTest, np_baselines, np_beta_asymptotic, np_beta_exact
from .tail_asymptotics import binomial_tail_check, cgf_eval, ld_taylor_audit, saddlepoint_solve, tilted_tail

__version__ = "0.1.0"

__all__ = [
    "CapacityAnalysis", "capacity_sets", "dimensionality", "saddlepoint_check", "solve_capacity",
    "Dmc", "Pmf", "detect_lattice", "is_weakly_symmetric", "make_named_channel", "parse_channel_spec",
    "CodeEnsembleSpec", "SimResult", "achievable_rate", "bivariate_prefactor", "simulate_random_code",
    "term2_estimate", "union_bound_terms",
    "FisherMatrices", "GradientVectors", "fisher_matrix", "game_saddlepoint", "gradient_vectors",
    "identity_audit", "local_optimality_audit",
    "BoundsResult", "a_eps_bounds", "bsc_constants", "log_volume_bracket", "sweep",
    "channel_moments", "divergence_moments", "f_eps", "q_inv", "zeta_hat_n", "zeta_n",
    "ProductTest", "np_baselines", "np_beta_asymptotic", "np_beta_exact",
    "binomial_tail_check", "cgf_eval", "ld_taylor_audit", "saddlepoint_solve", "tilted_tail",
]
