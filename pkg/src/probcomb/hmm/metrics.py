"""Label alignment and accuracy metrics for fitted HMMs."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def align_states(est_means, true_means) -> np.ndarray:
    """Permutation ``perm`` with ``perm[j]`` = estimated state matched to true state ``j``.

    Minimizes the total squared distance between matched means.
    """
    est = np.asarray(est_means, dtype=float)
    true = np.asarray(true_means, dtype=float)
    if est.shape != true.shape:
        raise ValueError("state counts differ")
    cost = ((true[:, None, :] - est[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(true), dtype=int)
    perm[rows] = cols
    return perm


def _matrix(p):
    return np.asarray(getattr(p, "A", p), dtype=float)


def transition_error(est, truth, perm) -> float:
    """Mean over rows of the total-variation distance between aligned estimated and true rows."""
    A_est, A_true = _matrix(est), _matrix(truth)
    perm = np.asarray(perm)
    aligned = A_est[np.ix_(perm, perm)]
    return float(np.mean(0.5 * np.abs(aligned - A_true).sum(axis=1)))


def state_accuracy(est_states, true_states, perm) -> float:
    """Fraction of time points whose aligned estimated state equals the true state."""
    perm = np.asarray(perm)
    to_true = np.empty_like(perm)
    to_true[perm] = np.arange(len(perm))
    hits = total = 0
    for e, t in zip(est_states, true_states):
        e, t = np.asarray(e, dtype=int), np.asarray(t, dtype=int)
        hits += int(np.sum(to_true[e] == t))
        total += len(t)
    return hits / total if total else float("nan")
