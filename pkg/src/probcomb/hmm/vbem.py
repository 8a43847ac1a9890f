"""Variational Bayes EM for an HMM with Gaussian emissions of known scale.

The factorized posterior is Dirichlet over ``pi0`` and each row of ``A`` and
an isotropic Normal over each emission mean. Each iteration runs
forward-backward under the expected-log parameters, records the evidence
lower bound, then performs the conjugate update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from ..errors import NumericalUnderflow
from .params import HmmParams, renormalize


@dataclass
class VbemPriors:
    alpha0: float = 1.0   # Dirichlet concentration for pi0 and each row of A
    m0: float = 0.0       # prior mean of each emission-mean component
    kappa0: float = 1.0   # prior precision of each emission-mean component


@dataclass
class VbemPosterior:
    pi_alpha: np.ndarray
    A_alpha: np.ndarray
    mean_m: np.ndarray
    mean_prec: np.ndarray
    obs_sd: float
    marginals: list = field(default_factory=list)
    pairwise: list = field(default_factory=list)
    elbo_trace: list = field(default_factory=list)
    converged: bool = False

    def point_estimate(self) -> HmmParams:
        """Posterior means of every parameter."""
        return HmmParams(renormalize(self.pi_alpha), renormalize(self.A_alpha), self.mean_m.copy(), self.obs_sd)


def scaled_forward_backward(pi, A, logb):
    """Forward-backward with per-step normalizers; ``pi`` and ``A`` may be sub-normalized.

    Returns ``(log_z, gamma, xi)``.
    """
    T, S = logb.shape
    if T == 0:
        return 0.0, np.zeros((0, S)), np.zeros((0, S, S))
    shift = logb.max(axis=1, keepdims=True)
    B = np.exp(logb - shift)
    alpha = np.empty((T, S))
    c = np.empty(T)
    a = pi * B[0]
    for t in range(T):
        if t > 0:
            a = (alpha[t - 1] @ A) * B[t]
        c[t] = a.sum()
        if not c[t] > 0.0:
            raise NumericalUnderflow(f"forward normalizer vanished at t={t}")
        alpha[t] = a / c[t]
    beta = np.ones((T, S))
    for t in range(T - 2, -1, -1):
        beta[t] = A @ (B[t + 1] * beta[t + 1]) / c[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi = alpha[:-1, :, None] * A[None] * (B[1:] * beta[1:])[:, None, :] / c[1:, None, None]
    return float(np.log(c).sum() + shift.sum()), gamma, xi


def _kl_dirichlet(a, b):
    """KL(Dir(a) || Dir(b)) along the last axis."""
    a0, b0 = a.sum(axis=-1), b.sum(axis=-1)
    return (gammaln(a0) - gammaln(a).sum(-1) - gammaln(b0) + gammaln(b).sum(-1)
            + ((a - b) * (digamma(a) - digamma(a0)[..., None])).sum(-1))


def _kl_normal(m, prec, m0, kappa0):
    """KL(N(m, I/prec) || N(m0, I/kappa0)) summed over components, one value per state."""
    d = m.shape[1]
    return 0.5 * (d * (kappa0 / prec - 1.0 + np.log(prec / kappa0)) + kappa0 * ((m - m0) ** 2).sum(1))


def vbem_fit(sequences, S, obs_sd, priors: VbemPriors | None = None, max_iters=200, tol=1e-6,
             init_means=None) -> VbemPosterior:
    priors = priors or VbemPriors()
    seqs = [np.asarray(y, dtype=float).reshape(-1, 2) for y in sequences]
    d = 2
    var = obs_sd ** 2
    n_obs = sum(len(y) for y in seqs)
    a0 = np.full(S, priors.alpha0)
    A0 = np.full((S, S), priors.alpha0)
    if init_means is None:
        allobs = np.vstack(seqs)
        init_means = allobs[np.linspace(0, len(allobs) - 1, S).astype(int)]
    post = VbemPosterior(
        pi_alpha=a0 + len(seqs) / S,
        A_alpha=A0 + max(n_obs - len(seqs), 0) / S ** 2,
        mean_m=np.array(init_means, dtype=float).reshape(S, d),
        mean_prec=np.full(S, priors.kappa0 + n_obs / S / var),
        obs_sd=obs_sd,
    )
    for it in range(max_iters):
        pi_star = np.exp(digamma(post.pi_alpha) - digamma(post.pi_alpha.sum()))
        A_star = np.exp(digamma(post.A_alpha) - digamma(post.A_alpha.sum(1))[:, None])
        total_log_z = 0.0
        gammas, xis = [], []
        for y in seqs:
            sq = ((y[:, None, :] - post.mean_m[None]) ** 2).sum(2) + d / post.mean_prec[None, :]
            logb = -0.5 * sq / var - 0.5 * d * math.log(2 * math.pi * var)
            lz, g, x = scaled_forward_backward(pi_star, A_star, logb)
            total_log_z += lz
            gammas.append(g)
            xis.append(x)
        elbo = (total_log_z - float(_kl_dirichlet(post.pi_alpha, a0)) - float(_kl_dirichlet(post.A_alpha, A0).sum())
                - float(_kl_normal(post.mean_m, post.mean_prec, priors.m0, priors.kappa0).sum()))
        post.elbo_trace.append(elbo)
        post.marginals, post.pairwise = gammas, xis
        if it > 0 and elbo - post.elbo_trace[-2] < tol:
            post.converged = True
            break
        if it == max_iters - 1:
            break
        # conjugate update from the expected sufficient statistics
        n0 = sum(g[0] for g in gammas if len(g))
        trans = sum(x.sum(0) for x in xis if len(x)) if any(len(x) for x in xis) else np.zeros((S, S))
        counts = sum(g.sum(0) for g in gammas)
        sum_y = sum(g.T @ y for g, y in zip(gammas, seqs))
        post.pi_alpha = a0 + n0
        post.A_alpha = A0 + trans
        post.mean_prec = priors.kappa0 + counts / var
        post.mean_m = (priors.kappa0 * priors.m0 + sum_y / var) / post.mean_prec[:, None]
    return post
