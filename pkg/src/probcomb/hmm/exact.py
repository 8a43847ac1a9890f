"""Exact HMM evidence and posteriors: log-space forward-backward and brute-force path sums."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .params import HmmParams


def emission_log_lik(params: HmmParams, obs) -> np.ndarray:
    """``(T, S)`` matrix of ``log N(y_t; mean_s, obs_sd^2 I)``."""
    obs = np.asarray(obs, dtype=float).reshape(-1, params.means.shape[1])
    d = obs.shape[1]
    sq = ((obs[:, None, :] - params.means[None, :, :]) ** 2).sum(axis=2)
    return -0.5 * sq / params.obs_sd ** 2 - d * math.log(params.obs_sd) - 0.5 * d * math.log(2 * math.pi)


@dataclass
class ExactPosterior:
    log_z: float
    marginals: np.ndarray   # (T, S)
    pairwise: np.ndarray    # (T - 1, S, S)


def exact_hmm(params: HmmParams, obs) -> ExactPosterior:
    logb = emission_log_lik(params, obs)
    T, S = logb.shape
    if T == 0:
        return ExactPosterior(0.0, np.zeros((0, S)), np.zeros((0, S, S)))
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi0)
        log_a = np.log(params.A)
    fwd = np.empty((T, S))
    fwd[0] = log_pi + logb[0]
    for t in range(1, T):
        fwd[t] = logsumexp(fwd[t - 1][:, None] + log_a, axis=0) + logb[t]
    log_z = float(logsumexp(fwd[-1]))
    bwd = np.zeros((T, S))
    for t in range(T - 2, -1, -1):
        bwd[t] = logsumexp(log_a + (logb[t + 1] + bwd[t + 1])[None, :], axis=1)
    marg = np.exp(fwd + bwd - log_z)
    pair = np.exp(fwd[:-1, :, None] + log_a[None] + (logb[1:] + bwd[1:])[:, None, :] - log_z)
    return ExactPosterior(log_z, marg, pair)


def path_log_joint(params: HmmParams, path, obs) -> float:
    """``log gamma(path) = log pi0 + sum log A + sum log emission`` for one state path."""
    logb = emission_log_lik(params, obs)
    lp = math.log(params.pi0[path[0]]) if params.pi0[path[0]] > 0 else -math.inf
    for t in range(len(path)):
        if t > 0:
            a = params.A[path[t - 1], path[t]]
            lp += math.log(a) if a > 0 else -math.inf
        lp += logb[t, path[t]]
    return lp


def brute_force_log_z(params: HmmParams, obs) -> float:
    """Log of the sum of ``gamma`` over every state path (``S ** T`` terms)."""
    obs = np.asarray(obs, dtype=float).reshape(-1, params.means.shape[1])
    if len(obs) == 0:
        return 0.0
    terms = [path_log_joint(params, p, obs) for p in itertools.product(range(params.n_states), repeat=len(obs))]
    return float(logsumexp(terms))
