"""Bouncing-ball HMM experiment: data, exact oracles, VBEM baseline, wake-sleep SMC models, metrics."""

from .data import BallSettings, BallTrajectory, Dataset, generate_dataset, simulate_ball, true_params
from .exact import ExactPosterior, brute_force_log_z, exact_hmm
from .metrics import align_states, state_accuracy, transition_error
from .params import HEADINGS, HmmDists, HmmParams
from .vbem import VbemPosterior, VbemPriors, vbem_fit
