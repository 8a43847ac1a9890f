"""Self-check suites: proper weighting, normalizer unbiasedness, gradient fidelity, oracles.

Every check compares the library against an independent computation
(enumeration, central finite differences, brute-force search) and returns a
:class:`CheckResult`. The CLI ``selfcheck`` command and the acceptance tests
both run these functions.
"""

from __future__ import annotations

import itertools
import math
import sys
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .distributions import Categorical, Dirichlet, NormalDiag
from .estimators import ParameterStore, grad_phi, grad_theta, normalized_weights
from .hmm.exact import brute_force_log_z, exact_hmm, path_log_joint
from .hmm.metrics import align_states
from .hmm.models import (fixed_globals, hmm_model, init_store, proposal_dists, proposal_step, smc_steps,
                         theta_globals)
from .hmm.params import HmmParams
from .hmm.vbem import VbemPriors
from .inference import (FlipKernel, IndependentSiteKernel, SMCOptions, importance, move, resample,
                        run_population, smc)
from .model import EvalContext, Model, bind_last, chain, compose, primitive, score
from .rng import RngStream


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


# -- enumerable targets -------------------------------------------------------------

@dataclass
class Enumerable:
    """A model with finitely many latent configurations and their exact log-densities."""

    name: str
    model: Model
    configs: list
    log_gamma: np.ndarray
    key: Callable

    @property
    def log_z(self) -> float:
        return float(logsumexp(self.log_gamma))


_PRIOR = Categorical([0.5, 0.5])
_LIKELIHOOD = (Categorical([0.8, 0.2]), Categorical([0.1, 0.9]))


@primitive
def bernoulli_pair(t):
    z = t.sample("z", _PRIOR)
    t.observe("y", _LIKELIHOOD[z], 1)
    return z


def bernoulli_target() -> Enumerable:
    """``z ~ Cat(0.5, 0.5)``, ``y = 1`` observed with ``p(y=1|z) = 0.2, 0.9``; ``Z = 0.55``."""
    return Enumerable("bernoulli-pair", bernoulli_pair, [(0,), (1,)], np.log([0.5 * 0.2, 0.5 * 0.9]),
                      lambda tr: (tr.value("z"),))


_PROPOSAL = Categorical([0.8, 0.2])


@primitive
def bernoulli_proposal(t):
    t.sample("z", _PROPOSAL)


SMALL_HMM = HmmParams(np.array([0.6, 0.4]), np.array([[0.7, 0.3], [0.2, 0.8]]),
                      np.array([[0.0, 0.0], [1.0, 0.5]]), 0.8)
SMALL_OBS = np.array([[0.1, -0.2], [0.9, 0.7], [0.4, 0.1], [1.2, 0.3]])


def hmm_target(T=3, params: HmmParams = SMALL_HMM, obs=SMALL_OBS) -> Enumerable:
    """The HMM over ``T`` steps; configurations are state paths, scored by direct path sums."""
    ys = obs[:T]
    paths = list(itertools.product(range(params.n_states), repeat=T))
    lg = np.array([path_log_joint(params, p, ys) for p in paths])
    return Enumerable(f"hmm S={params.n_states} T={T}", hmm_model(fixed_globals(params), ys), paths, lg,
                      lambda tr: tuple(tr.value(f"right/step:{t}/z") for t in range(T)))


def _hmm_proposals(T, S=2):
    gen = np.random.default_rng(7)
    return [Categorical(gen.dirichlet(np.full(S, 2.0))) for _ in range(T)]


# -- Monte Carlo estimates of E[h(X) W] ----------------------------------------------

def _unit_row(target: Enumerable, samples, index):
    """Mean of ``h_c(x) w`` over the samples of one unit, for every configuration ``c``."""
    row = np.zeros(len(target.configs))
    for s in samples:
        if s.log_weight == -math.inf:
            continue
        row[index[target.key(s.trace)]] += math.exp(s.log_weight)
    return row / len(samples)


def _check_units(name, target: Enumerable, rows: np.ndarray, n_samples: int) -> list:
    n = len(rows)
    mean = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / math.sqrt(n)
    gamma = np.exp(target.log_gamma)
    ok_h = np.abs(mean - gamma) <= 4.0 * se + 1e-12
    worst = float(np.max(np.abs(mean - gamma) / np.maximum(se, 1e-300)))
    w = rows.sum(axis=1)
    z = float(gamma.sum())
    w_se = w.std(ddof=1) / math.sqrt(n)
    ratio = w.mean() / z
    return [
        CheckResult(f"proper weighting / {name}", bool(ok_h.all()),
                    f"{len(gamma)} indicators, n={n_samples}, max |dev|/se = {worst:.2f}"),
        CheckResult(f"normalizer / {name}", abs(ratio - 1.0) <= 4.0 * w_se / z,
                    f"E[W]/Z = {ratio:.4f} +- {w_se / z:.4f} (4 se band)"),
    ]


def _run_units(target: Enumerable, n_units, draw):
    index = {c: i for i, c in enumerate(target.configs)}
    rows = np.empty((n_units, len(target.configs)))
    for u in range(n_units):
        rows[u] = _unit_row(target, draw(u), index)
    return rows


def proper_weighting_suite(n=100_000, seed=0) -> list:
    """Proper weighting of each operator on enumerable targets.

    Single-sample operators use ``n`` independent draws. Population operators
    (resample, smc) use ``n / 4`` independent populations of 4 particles;
    each population's mean of ``h(x) w`` is one unbiased unit.
    """
    root = RngStream(seed).child("proper-weighting")
    bern = bernoulli_target()
    hmm3 = hmm_target(3)
    results = []

    def single(name, target, model):
        rng = root.child(name)
        rows = _run_units(target, n, lambda u: [model.run(rng=rng.child(u))])
        results.extend(_check_units(name, target, rows, n))

    single("primitive (bernoulli-pair)", bern, bern.model)
    single("importance (bernoulli-pair)", bern, importance(bern.model, bernoulli_proposal))
    single("move_reweight (bernoulli-pair, asymmetric kernel)", bern,
           move(bern.model, IndependentSiteKernel("z", [0.3, 0.7])))
    single("move_mh (bernoulli-pair, flip kernel)", bern, move(bern.model, FlipKernel(["z"], 2), mh=True))

    k = 4
    n_pop = n // k
    for scheme in ("multinomial", "systematic"):
        name = f"resample {scheme} (bernoulli-pair, K={k})"
        rng = root.child(name)

        def draw(u, rng=rng, scheme=scheme):
            pop = run_population(bern.model, (), k, EvalContext(rng.child(u)))
            return resample(pop, rng.child(u).child("resample"), scheme).particles

        results.extend(_check_units(name, bern, _run_units(bern, n_pop, draw), n_pop * k))

    qs = _hmm_proposals(3)
    name = f"smc ({hmm3.name}, K={k}, learned-style proposals, resampling)"
    rng = root.child(name)
    glob = fixed_globals(SMALL_HMM)
    steps = smc_steps(SMALL_OBS[:3], qs)
    opts = SMCOptions(resample_threshold=1.0)

    def draw_smc(u):
        return smc(glob, steps, k, opts, ctx=EvalContext(rng.child(u))).population.particles

    results.extend(_check_units(name, hmm3, _run_units(hmm3, n_pop, draw_smc), n_pop * k))
    return results


def smc_unbiasedness(k=2048, seeds=50, T=4) -> CheckResult:
    """Mean of ``exp(log Z_hat - log Z)`` over seeds on an S=2 HMM, within 3 se of 1."""
    target = hmm_target(T)
    glob = fixed_globals(SMALL_HMM)
    steps = smc_steps(SMALL_OBS[:T])
    ratios = np.array([math.exp(smc(glob, steps, k, seed=s).log_evidence - target.log_z) for s in range(seeds)])
    mean, se = ratios.mean(), ratios.std(ddof=1) / math.sqrt(seeds)
    mean_abs = float(np.mean(np.abs(np.log(ratios))))
    return CheckResult(f"smc normalizer (S=2, T={T}, K={k}, {seeds} seeds)", abs(mean - 1.0) <= 3.0 * se,
                       f"mean ratio {mean:.5f} +- {se:.5f}; mean |log ratio| {mean_abs:.4f}")


# -- finite differences ---------------------------------------------------------------

def _rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / scale


def central_difference(f, x, h=1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def _random_dist(kind, gen):
    if kind == "normal":
        d = int(gen.integers(1, 4))
        dist = NormalDiag(gen.normal(size=d), np.exp(gen.normal(scale=0.5, size=d)))
        return dist, tuple(np.asarray(dist.mean) + np.asarray(dist.scale) * gen.normal(size=d))
    if kind == "categorical":
        dist = Categorical(gen.dirichlet(np.full(int(gen.integers(2, 6)), 1.5)))
        return dist, int(gen.integers(len(dist.probs)))
    dist = Dirichlet(np.exp(gen.normal(scale=0.7, size=int(gen.integers(2, 5)))) + 0.5)
    return dist, gen.dirichlet(np.full(len(dist.alpha), 3.0))


def _perturbed_value_fn(dist, value):
    """``u -> log p(value(u))`` for the unconstrained value coordinates that ``value_grad`` uses."""
    if isinstance(dist, NormalDiag):
        return np.array(value, dtype=float), lambda u: dist.log_prob(tuple(u))
    if isinstance(dist, Dirichlet):
        v = np.asarray(value, dtype=float)

        def f(u):  # value = softmax of (u, 0)
            e = np.exp(np.append(u, 0.0) - max(u.max(), 0.0))
            return dist.log_prob(e / e.sum())

        return np.log(v[:-1] / v[-1]), f
    return None, None


def distribution_gradient_check(points=100, seed=0, h=1e-5, tol=1e-6) -> list:
    gen = RngStream(seed).child("distribution-fd").generator()
    results = []
    for kind in ("normal", "categorical", "dirichlet"):
        worst_score = worst_value = 0.0
        for _ in range(points):
            dist, value = _random_dist(kind, gen)
            u0 = dist.unconstrained()
            fd = central_difference(lambda u: dist.with_unconstrained(u).log_prob(value), u0, h)
            worst_score = max(worst_score, _rel_err(dist.score_grad(value), fd))
            x0, f = _perturbed_value_fn(dist, value)
            if x0 is not None:
                worst_value = max(worst_value, _rel_err(dist.value_grad(value), central_difference(f, x0, h)))
        results.append(CheckResult(f"score_grad vs finite differences / {kind}", worst_score <= tol,
                                   f"{points} points, max rel err {worst_score:.2e}"))
        if kind != "categorical":
            results.append(CheckResult(f"value_grad vs finite differences / {kind}", worst_value <= tol,
                                       f"{points} points, max rel err {worst_value:.2e}"))
    return results


GRAD_OBS_SD = 0.7


def _grad_problem(gen, S=3, T=4):
    ys = gen.normal(scale=1.0, size=(T, 2))
    store = init_store(S, gen.normal(size=(S, 2)), GRAD_OBS_SD)
    for name in store.names():
        store.set(name, gen.normal(scale=0.8, size=store[name].shape))
    target = hmm_model(theta_globals(S, GRAD_OBS_SD, VbemPriors()), ys)
    return ys, store, target


def _proposal_model(store, ys):
    passthrough = primitive(lambda t: None, name="passthrough")
    return compose(passthrough, chain([bind_last(proposal_step, q) for q in proposal_dists(store, ys, GRAD_OBS_SD)]))


def _flat(store, names):
    return np.concatenate([store[n].ravel() for n in names])


def _assign(store, names, x):
    i = 0
    for n in names:
        size = store[n].size
        store.set(n, x[i:i + size].reshape(store[n].shape))
        i += size


def estimator_gradient_check(points=100, seed=0, k=6, h=1e-5, tol=1e-6) -> list:
    """Both estimators against central differences of the frozen-weight objectives.

    ``sum_k w_k log gamma_theta(x_k)`` for Theta and ``-sum_k w_k log q_phi(x_k)``
    for Phi, with the normalized weights held fixed.
    """
    gen = RngStream(seed).child("estimator-fd").generator()
    worst = {"theta": 0.0, "phi": 0.0}
    for p in range(points):
        ys, store, target = _grad_problem(gen)
        sampler = importance(target, _proposal_model(store, ys))
        pop = run_population(sampler, (), k, EvalContext(RngStream(p), params=store))
        w = normalized_weights(pop)

        theta_names = store.names("theta")
        store.zero_grad()
        grad_theta(pop, store, w)
        analytic = np.concatenate([store.grad(n).ravel() for n in theta_names])

        def f_theta(x):
            probe = store.copy()
            _assign(probe, theta_names, x)
            ctx = EvalContext(RngStream(0), params=probe)
            return sum(wk * score(target, (), s.trace, ctx).trace.log_joint() for wk, s in zip(w, pop))

        worst["theta"] = max(worst["theta"], _rel_err(analytic, central_difference(f_theta, _flat(store, theta_names), h)))

        phi_names = store.names("phi")
        store.zero_grad()
        grad_phi(pop, [s.proposal for s in pop], store, w)
        analytic = np.concatenate([store.grad(n).ravel() for n in phi_names])

        def f_phi(x):
            probe = store.copy()
            _assign(probe, phi_names, x)
            q = _proposal_model(probe, ys)
            ctx = EvalContext(RngStream(0), params=probe)
            return -sum(wk * score(q, (), s.proposal, ctx).trace.log_joint() for wk, s in zip(w, pop))

        worst["phi"] = max(worst["phi"], _rel_err(analytic, central_difference(f_phi, _flat(store, phi_names), h)))
    return [CheckResult(f"grad_{r} vs finite differences (frozen weights)", worst[r] <= tol,
                        f"{points} points, max rel err {worst[r]:.2e}") for r in ("theta", "phi")]


# -- exact oracles --------------------------------------------------------------------

def random_hmm(gen, S, d=2) -> HmmParams:
    return HmmParams(gen.dirichlet(np.ones(S)), gen.dirichlet(np.ones(S), size=S),
                     gen.normal(size=(S, d)), float(np.exp(gen.normal(scale=0.3))))


def forward_oracle_check(seed=0, instances_per_size=3, tol=1e-10) -> CheckResult:
    gen = RngStream(seed).child("forward-oracle").generator()
    worst, count = 0.0, 0
    for S in (1, 2, 3):
        for T in range(0, 7):
            for _ in range(instances_per_size):
                params = random_hmm(gen, S)
                obs = gen.normal(size=(T, 2))
                worst = max(worst, abs(exact_hmm(params, obs).log_z - brute_force_log_z(params, obs)))
                count += 1
    return CheckResult("forward log Z vs brute-force path sums (S<=3, T<=6)", worst <= tol,
                       f"{count} instances, max |diff| {worst:.2e}")


def alignment_oracle_check(seed=0, instances=200) -> CheckResult:
    gen = RngStream(seed).child("alignment-oracle").generator()
    bad = 0
    for _ in range(instances):
        est, true = gen.normal(size=(4, 2)), gen.normal(size=(4, 2))
        perm = align_states(est, true)
        cost = lambda p: float(((true - est[list(p)]) ** 2).sum())  # noqa: E731
        best = min(cost(p) for p in itertools.permutations(range(4)))
        bad += not math.isclose(cost(perm), best, rel_tol=1e-12, abs_tol=1e-12)
    return CheckResult("Hungarian alignment vs exhaustive search (S=4)", bad == 0,
                       f"{instances} instances, {bad} mismatches")


# -- driver ---------------------------------------------------------------------------

def all_checks(seed=0, quick=False):
    """Yield ``(suite, results)`` pairs in a fixed order."""
    n = 20_000 if quick else 100_000
    points = 20 if quick else 100
    yield "enumeration oracles", [forward_oracle_check(seed), alignment_oracle_check(seed)]
    yield "proper weighting", proper_weighting_suite(n, seed)
    yield "normalizer", [smc_unbiasedness(k=512 if quick else 2048, seeds=20 if quick else 50)]
    yield "finite differences", distribution_gradient_check(points, seed) + estimator_gradient_check(points, seed)


def run_selfcheck(seed=0, quick=False, out=sys.stdout) -> bool:
    ok = True
    for suite, results in all_checks(seed, quick):
        print(f"[{suite}]", file=out)
        for r in results:
            print("  " + r.line(), file=out)
            ok &= r.passed
        out.flush()
    print("selfcheck: all passed" if ok else "selfcheck: FAILURES", file=out)
    return ok
