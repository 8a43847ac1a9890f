"""The HMM written with model combinators, plus its learned proposal.

Carried state is ``(HmmDists, previous_state)``; the global model produces it
with ``previous_state=None``. Three global models are provided:

* :func:`fixed_globals` - known parameters, no sites;
* :func:`prior_globals` - parameters drawn from Dirichlet / Normal priors;
* :func:`theta_globals` - point parameters read from a ParameterStore (Theta)
  and scored under the same priors as observed factors, so the model's
  evidence is the penalized likelihood that wake-phase training ascends.

The proposal draws each state from a categorical whose free logits are an
affine function of the displacement scaled by ``obs_sd`` (Phi).
"""

from __future__ import annotations

import numpy as np

from ..distributions import Binding, Categorical, Dirichlet, NormalDiag
from ..estimators import ParameterStore, SMCProblem
from ..inference import importance
from ..model import Model, bind_last, hmm, primitive
from ..trace import Trace, WeightedSample
from .params import HmmDists, HmmParams
from .vbem import VbemPriors


@primitive
def hmm_step(t, carry, y):
    dists, prev = carry
    z = t.sample("z", dists.initial if prev is None else dists.rows[prev])
    if not 0 <= z < dists.n_states:
        t.factor("y", -np.inf)
        return (dists, z)
    t.observe("y", dists.emissions[z], y)
    return (dists, z)


@primitive
def proposal_step(t, carry, q):
    t.sample("z", q)
    return carry


def fixed_globals(params: HmmParams) -> Model:
    d = params.dists
    return primitive(lambda t: (d, None), name="fixed_globals")


def prior_globals(n_states, obs_sd, priors: VbemPriors | None = None, dim=2) -> Model:
    priors = priors or VbemPriors()
    alpha = np.full(n_states, priors.alpha0)
    mean_prior = NormalDiag(np.full(dim, priors.m0), 1.0 / np.sqrt(priors.kappa0))

    @primitive
    def prior_globals(t):
        pi0 = t.sample("pi0", Dirichlet(alpha))
        rows = tuple(Categorical(_simplex(t.sample(f"A:{i}", Dirichlet(alpha)))) for i in range(n_states))
        means = [t.sample(f"mean:{s}", mean_prior) for s in range(n_states)]
        return (HmmDists(Categorical(_simplex(pi0)), rows,
                         tuple(NormalDiag(m, obs_sd) for m in means)), None)

    return prior_globals


def _simplex(p):
    p = np.asarray(p, dtype=float)
    return p / p.sum()


def _free_logit_binding(entry, row, n_free):
    return Binding(entry, row * n_free + np.arange(n_free), np.arange(n_free))


def _mean_binding(state, dim, obs_sd):
    # the store holds means in units of obs_sd; coef carries the chain rule
    return Binding("means", state * dim + np.arange(dim), np.arange(dim), np.full(dim, obs_sd))


def _softmax_pinned(free):
    full = np.append(free, 0.0)
    e = np.exp(full - full.max())
    return e / e.sum()


def theta_globals(n_states, obs_sd, priors: VbemPriors | None = None, dim=2) -> Model:
    """Global model reading ``pi0_logits``, ``A_logits`` and ``means`` from ``ctx.params``.

    The output depends only on the store contents, so it is cached per store
    version and shared by every particle.
    """
    S, F = n_states, n_states - 1
    cache = {}

    def build(store):
        pi_logits = store["pi0_logits"]
        A_logits = store["A_logits"]
        means = store["means"] * obs_sd
        initial = Categorical.from_logits(np.append(pi_logits, 0.0), (_free_logit_binding("pi0_logits", 0, F),))
        rows = tuple(Categorical.from_logits(np.append(A_logits[i], 0.0), (_free_logit_binding("A_logits", i, F),))
                     for i in range(S))
        emissions = tuple(NormalDiag(means[s], obs_sd, (_mean_binding(s, dim, obs_sd),)) for s in range(S))
        trace = Trace()
        lw = 0.0
        if priors is not None:
            from ..trace import observe_at

            dir_prior = Dirichlet(np.full(S, priors.alpha0))
            mean_prior = NormalDiag(np.full(dim, priors.m0), 1.0 / np.sqrt(priors.kappa0))
            lw += observe_at(trace, "prior/pi0", dir_prior, initial.probs,
                             (_free_logit_binding("pi0_logits", 0, F),))
            for i in range(S):
                lw += observe_at(trace, f"prior/A:{i}", dir_prior, rows[i].probs,
                                 (_free_logit_binding("A_logits", i, F),))
            for s in range(S):
                lw += observe_at(trace, f"prior/mean:{s}", mean_prior, tuple(means[s]),
                                 (_mean_binding(s, dim, obs_sd),))
        return WeightedSample((HmmDists(initial, rows, emissions), None), trace, lw)

    def program(inputs, ctx):
        store = ctx.params
        key = (store.uid, store.version)
        if cache.get("key") != key:
            cache["key"] = key
            cache["sample"] = build(store)
        return cache["sample"]

    return Model(program, "theta_globals", 0)


def store_params(store: ParameterStore, obs_sd) -> HmmParams:
    """Point parameters currently held in the Theta entries."""
    pi0 = _softmax_pinned(store["pi0_logits"])
    A = np.vstack([_softmax_pinned(r) for r in store["A_logits"]])
    return HmmParams(pi0, A, store["means"] * obs_sd, obs_sd)


def proposal_dists(store: ParameterStore, ys, obs_sd) -> list:
    """Per-step proposal categoricals for one sequence, bound to the Phi entries."""
    ys = np.asarray(ys, dtype=float).reshape(len(ys), -1)
    W = store["q_weight"]
    F, D = W.shape
    feats = ys / obs_sd
    out = []
    for t, f in enumerate(feats):
        head = "q_init" if t == 0 else "q_bias"
        free = store[head] + W @ f
        bindings = (
            Binding(head, np.arange(F), np.arange(F)),
            Binding("q_weight", np.arange(F * D), np.repeat(np.arange(F), D), np.tile(f, F)),
        )
        out.append(Categorical(_softmax_pinned(free), bindings, validate=False))
    return out


def init_store(n_states, init_means, obs_sd, dim=2) -> ParameterStore:
    """Zero logits, the given emission means, and a uniform proposal.

    ``means`` is stored divided by ``obs_sd`` so that one learning rate suits
    logits and means alike.
    """
    S, F = n_states, n_states - 1
    store = ParameterStore()
    store.add("pi0_logits", np.zeros(F), "theta")
    store.add("A_logits", np.zeros((S, F)), "theta")
    store.add("means", np.asarray(init_means, dtype=float).reshape(S, dim) / obs_sd, "theta")
    store.add("q_init", np.zeros(F), "phi")
    store.add("q_bias", np.zeros(F), "phi")
    store.add("q_weight", np.zeros((F, dim)), "phi")
    return store


def hmm_model(global_model: Model, ys) -> Model:
    arr = np.asarray(ys, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return hmm(global_model, hmm_step, [tuple(y) for y in arr])


def smc_steps(ys, qs=None) -> list:
    """One model per time step; with proposals ``qs`` each step is an importance step."""
    ys = [tuple(y) for y in np.asarray(ys, dtype=float).reshape(len(ys), -1)]
    if qs is None:
        return [bind_last(hmm_step, y) for y in ys]
    return [importance(bind_last(hmm_step, y), bind_last(proposal_step, q)) for y, q in zip(ys, qs)]


def problem_builder(n_states, obs_sd, priors: VbemPriors | None = None):
    """``build(datum, store) -> SMCProblem`` for wake-sleep training."""
    glob = theta_globals(n_states, obs_sd, priors)

    def build(ys, store):
        return SMCProblem(glob, smc_steps(ys, proposal_dists(store, ys, obs_sd)))

    return build
