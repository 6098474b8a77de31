"""Agnostic policy search in low-rank episodic MDPs by reward extrapolation."""
from ._backend import BACKEND
from .coeffs import (alpha_mk, beta_table, ch_extension_check, companion, elem_sym,
                     extrapolate)
from .estimator import (FitConfig, FitResult, InfeasibleFit, SearchReport, adaptive_cap,
                        estimate_policy_value, fit_adaptive, fit_basic, is_reward_estimates,
                        monte_carlo_value, policy_search, rank_adaptive_search)
from .mdp import (Dataset, Episode, Policy, PolicyClass, RewardProfile, Spectrum, TabularMdp,
                  exact_reward_profile, exact_value, induced_transition, random_lowrank_mdp,
                  random_policy_class, sample_dataset, sample_episode,
                  sample_uniform_dataset, spectrum_of)

__version__ = "0.1.0"
