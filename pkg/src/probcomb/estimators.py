"""Parameter store, self-normalized gradient estimators, and training loop.

The generative-parameter estimator is ``sum_k wbar_k grad_theta log gamma(x_k)``
and the proposal estimator is ``-sum_k wbar_k grad_phi log q(x_k)``, with
``wbar`` the normalized weights. Both are computed by walking traces and
routing each site's analytic score through the bindings on its distribution
(and, for observed sites whose value is itself a parameter, its value
bindings).
"""

from __future__ import annotations

import enum
import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import AllWeightsZero, NonFiniteGradient
from .inference import Population, SMCOptions, _check_weights, _log_weights, _lse, smc
from .model import EvalContext
from .parallel import map_ordered
from .rng import RngStream


class ParamRole(str, enum.Enum):
    THETA = "theta"
    PHI = "phi"


@dataclass
class ParamEntry:
    value: np.ndarray
    grad: np.ndarray
    role: ParamRole


_store_ids = itertools.count()


class ParameterStore:
    """Named unconstrained parameter vectors with gradient accumulators.

    ``version`` increments on every in-place update so models may cache
    anything derived from the values.
    """

    def __init__(self):
        self.entries: dict[str, ParamEntry] = {}
        self.version = 0
        # unlike id(), never reused, so (uid, version) is a safe cache key
        self.uid = next(_store_ids)

    def add(self, name, value, role):
        value = np.array(value, dtype=float)
        self.entries[name] = ParamEntry(value, np.zeros_like(value), ParamRole(role))
        self.version += 1
        return value

    def __getitem__(self, name) -> np.ndarray:
        return self.entries[name].value

    def __contains__(self, name):
        return name in self.entries

    def set(self, name, value):
        e = self.entries[name]
        e.value[...] = value
        self.version += 1

    def grad(self, name) -> np.ndarray:
        return self.entries[name].grad

    def role(self, name) -> ParamRole:
        return self.entries[name].role

    def names(self, role=None):
        return [n for n, e in self.entries.items() if role is None or e.role == role]

    def zero_grad(self):
        for e in self.entries.values():
            e.grad[...] = 0.0

    def grad_norm(self, role=None) -> float:
        return math.sqrt(sum(float(np.sum(self.entries[n].grad ** 2)) for n in self.names(role)))

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for n, e in self.entries.items():
            out.entries[n] = ParamEntry(e.value.copy(), e.grad.copy(), e.role)
        out.version = self.version
        return out

    def to_json(self) -> dict:
        return {n: {"role": e.role.value, "shape": list(e.value.shape), "value": e.value.ravel().tolist()}
                for n, e in self.entries.items()}

    @classmethod
    def from_json(cls, obj) -> "ParameterStore":
        s = cls()
        for n, e in obj.items():
            s.add(n, np.array(e["value"], dtype=float).reshape(e["shape"]), e["role"])
        return s


def normalized_weights(p) -> np.ndarray:
    lw = _log_weights(p)
    _check_weights(lw)
    return np.exp(lw - _lse(lw))


def log_evidence(p) -> float:
    """``log (1/K sum_k w_k)``: the log of the unbiased normalizer estimate."""
    lw = _log_weights(p)
    _check_weights(lw)
    return float(_lse(lw) - math.log(len(lw)))


def _accumulate(traces, weights, store: ParameterStore, role: ParamRole, sign: float):
    # records are shared between particles after resampling; score each once
    mass: dict[int, list] = {}
    for trace, w in zip(traces, weights):
        if w == 0.0:
            continue
        for rec in trace:
            slot = mass.get(id(rec))
            if slot is None:
                mass[id(rec)] = [rec, w]
            else:
                slot[1] += w
    for rec, w in mass.values():
        scale = sign * w
        bindings = [b for b in rec.dist.bindings if store.role(b.entry) == role]
        if bindings:
            g = rec.dist.score_grad(rec.value)
            for b in bindings:
                store.grad(b.entry).reshape(-1)[b.store_index] += scale * (b.coef * g[b.local_index])
        vbind = [b for b in rec.value_bindings if store.role(b.entry) == role]
        if vbind:
            g = rec.dist.value_grad(rec.value)
            for b in vbind:
                store.grad(b.entry).reshape(-1)[b.store_index] += scale * (b.coef * g[b.local_index])


def grad_theta(p: Population, store: ParameterStore, weights=None):
    """Accumulate ``sum_k wbar_k grad log gamma_theta(x_k)`` into the Theta entries."""
    w = normalized_weights(p) if weights is None else np.asarray(weights, dtype=float)
    _accumulate([s.trace for s in p.particles], w, store, ParamRole.THETA, 1.0)


def grad_phi(p: Population, proposal_traces, store: ParameterStore, weights=None):
    """Accumulate ``-sum_k wbar_k grad log q_phi(x_k)`` into the Phi entries."""
    w = normalized_weights(p) if weights is None else np.asarray(weights, dtype=float)
    proposal_traces = list(proposal_traces)
    if len(proposal_traces) != p.k:
        raise ValueError("one proposal trace per particle is required")
    _accumulate(proposal_traces, w, store, ParamRole.PHI, -1.0)


@dataclass
class Adam:
    """Adaptive-moment optimizer state. Steps ascend the accumulated gradients."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: ParameterStore, opt: Adam, names=None):
    """One adaptive-moment step: ascent on Theta entries, descent on Phi entries.

    Theta gradients estimate the gradient of the log evidence, which is
    maximized. Phi gradients estimate the gradient of the inclusive KL
    divergence (they carry its minus sign), which is minimized.
    """
    names = store.names() if names is None else names
    for n in names:
        if not np.all(np.isfinite(store.grad(n))):
            raise NonFiniteGradient(f"gradient of {n!r} is not finite")
    opt.step_count += 1
    t = opt.step_count
    c1 = 1.0 - opt.beta1 ** t
    c2 = 1.0 - opt.beta2 ** t
    for n in names:
        g = store.grad(n)
        m = opt.m.setdefault(n, np.zeros_like(g))
        v = opt.v.setdefault(n, np.zeros_like(g))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        direction = 1.0 if store.role(n) is ParamRole.THETA else -1.0
        store.entries[n].value += direction * opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    store.version += 1
    return store


@dataclass
class SMCProblem:
    """What the training loop needs for one datum: a global model and its steps."""

    global_model: object
    steps: list
    inputs: tuple = ()


def _datum_gradients(problem, k, opts, store, rng):
    local = store.copy()
    local.zero_grad()
    ctx = EvalContext(rng, params=local)
    res = smc(problem.global_model, problem.steps, k, opts, inputs=problem.inputs, ctx=ctx)
    pop = res.population
    w = normalized_weights(pop)
    grad_theta(pop, local, w)
    if any(s.proposal is not None for s in pop):
        grad_phi(pop, [s.proposal if s.proposal is not None else () for s in pop], local, w)
    return {n: local.grad(n).copy() for n in local.names()}, res.log_evidence


def wake_sleep_epoch(dataset, build, k: int, store: ParameterStore, opt: Adam, *,
                     batch_size: int = 5, smc_opts: SMCOptions | None = None,
                     rng: RngStream | None = None, workers: int = 1, timing: bool = False) -> dict:
    """One pass over ``dataset``: SMC per datum, both gradients from the same population.

    ``build(datum, store)`` returns an :class:`SMCProblem`. One optimizer step
    per mini-batch. A datum whose population collapses is skipped and counted.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = rng or RngStream(0)
    smc_opts = smc_opts or SMCOptions()
    t0 = time.perf_counter()
    evidences, theta_norms, phi_norms, failed = [], [], [], []
    for start in range(0, len(dataset), batch_size):
        idx = list(range(start, min(start + batch_size, len(dataset))))
        problems = [build(dataset[i], store) for i in idx]

        def work(j):
            try:
                return _datum_gradients(problems[j], k, smc_opts, store, rng.child(f"datum:{idx[j]}"))
            except AllWeightsZero:
                return None

        results = map_ordered(work, len(idx), workers)
        store.zero_grad()
        for i, r in zip(idx, results):
            if r is None:
                failed.append(i)
                continue
            grads, lz = r
            for n, g in grads.items():
                store.grad(n)[...] += g
            evidences.append(lz)
        theta_norms.append(store.grad_norm(ParamRole.THETA))
        phi_norms.append(store.grad_norm(ParamRole.PHI))
        adam_step(store, opt)
    return {
        "mean_log_evidence": float(np.mean(evidences)) if evidences else -math.inf,
        "theta_grad_norm": float(np.mean(theta_norms)),
        "phi_grad_norm": float(np.mean(phi_norms)),
        "failed": failed,
        "wall_ms": (time.perf_counter() - t0) * 1e3 if timing else None,
    }


def dumps_params(store: ParameterStore, **meta) -> str:
    return json.dumps({**meta, "params": store.to_json()}, indent=2, sort_keys=True)
