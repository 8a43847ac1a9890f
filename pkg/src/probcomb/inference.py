"""Inference combinators: importance, resample, move, and SMC built from them.

Every operation here maps properly weighted samples to properly weighted
samples. Weights are kept in log-space; ``-inf`` is a legal weight and only a
population with *no* finite weight is an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllWeightsZero, UnsupportedProposal
from .model import EvalContext, Mode, Model, chain, compose, score
from .rng import RngStream
from .trace import Role, Trace, WeightedSample, log_joint, merge_all, prefix, push_path

NEG_INF = -math.inf


@dataclass
class Population:
    """K weighted samples evaluated under shared inputs and parameters."""

    particles: list
    provenance: str = ""
    ancestors: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.particles)

    def __len__(self):
        return len(self.particles)

    def __iter__(self):
        return iter(self.particles)

    def __getitem__(self, i):
        return self.particles[i]

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([p.log_weight for p in self.particles], dtype=float)


def _lse(lw) -> float:
    """``log(sum(exp(lw)))`` for a 1-d array; cheaper than scipy's general version."""
    m = float(lw.max())
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(float(np.exp(lw - m).sum()))


def _log_weights(p) -> np.ndarray:
    if isinstance(p, Population):
        return p.log_weights
    return np.asarray(p, dtype=float)


def _check_weights(lw):
    if np.any(lw == math.inf) or np.any(np.isnan(lw)):
        raise ValueError("log-weights must be finite or -inf")
    if not np.any(np.isfinite(lw)):
        raise AllWeightsZero()


def log_mean_exp(lw) -> float:
    """``log(mean(exp(lw)))``; raises :class:`AllWeightsZero` when every entry is -inf."""
    lw = _log_weights(lw)
    _check_weights(lw)
    return float(_lse(lw) - math.log(len(lw)))


# -- importance ---------------------------------------------------------------

def importance(f: Model, g: Model) -> Model:
    """Propose with ``g``, rescore under ``f``.

    The weight is ``w_g * gamma_f(x) / gamma_g(x)``, which reduces to
    ``gamma_f(x) / q_g(x)`` when ``g`` is weighted by likelihood with no
    observations. ``f``-latents missing from the proposal are drawn from
    ``f`` itself and cancel out of the ratio.
    """

    def program(inputs, ctx):
        if ctx.score_only:
            return f.program(inputs, ctx)
        prop = g.program(inputs, ctx.with_rng(ctx.rng.child("proposal")))
        target = f.program(inputs, EvalContext(ctx.rng.child("target"), prop.trace, ctx.params,
                                               Mode.GENERATE, ""))
        _check_compatible(target.trace, prop.trace)
        log_gamma_f = 0.0
        for r in target.trace:
            if r.role is not Role.SAMPLED:
                log_gamma_f += r.log_prob
        lw = prop.log_weight + (log_gamma_f - log_joint(prop.trace))
        if lw != lw:
            lw = NEG_INF
        return WeightedSample(target.output, target.trace, lw, prop.trace)

    return Model(program, f"importance({f.name},{g.name})", f.arity)


def _check_compatible(target: Trace, proposal: Trace):
    for r in proposal:
        t = target.get(r.address)
        if r.role is Role.OBSERVED:
            if t is not None and t.role is not Role.OBSERVED:
                raise UnsupportedProposal(f"{r.address!r} is observed in the proposal but latent in the target")
        elif t is None:
            raise UnsupportedProposal(f"proposal latent {r.address!r} does not exist in the target")
        elif t.role is Role.OBSERVED:
            raise UnsupportedProposal(f"{r.address!r} is observed in the target but latent in the proposal")


# -- populations --------------------------------------------------------------

def run_population(f: Model, inputs, k: int, ctx: EvalContext | None = None, *, seed=0,
                   params=None) -> Population:
    """K independent evaluations; particle ``i`` uses substream ``particle:i``."""
    if k < 1:
        raise ValueError("K must be at least 1")
    if ctx is None:
        ctx = EvalContext(RngStream(seed), params=params)
    inputs = tuple(inputs)
    parts = [f.program(inputs, ctx.with_rng(ctx.rng.child(f"particle:{i}"))) for i in range(k)]
    return Population(parts, provenance=f.name)


def resample_indices(log_weights, rng: RngStream, scheme: str = "multinomial", n=None) -> np.ndarray:
    """Ancestor indices drawn in proportion to ``exp(log_weights)``."""
    lw = np.asarray(log_weights, dtype=float)
    _check_weights(lw)
    k = len(lw) if n is None else n
    w = np.exp(lw - lw.max())
    cum = np.cumsum(w)
    cum /= cum[-1]
    if scheme == "multinomial":
        u = rng.uniforms(k)
    elif scheme == "systematic":
        u = (rng.uniform() + np.arange(k)) / k
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    idx = np.searchsorted(cum, u, side="right")
    return np.minimum(idx, len(lw) - 1)


def resample(p: Population, rng: RngStream, scheme: str = "multinomial") -> Population:
    """Draw K ancestors; every output carries the population's mean weight."""
    lw = p.log_weights
    anc = resample_indices(lw, rng, scheme)
    mean_lw = float(_lse(lw) - math.log(len(lw)))
    parts = [p.particles[a]._replace(log_weight=mean_lw) for a in anc]
    return Population(parts, provenance=f"resample({p.provenance})", ancestors=anc)


def ess(p) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2``, in [1, K]."""
    lw = _log_weights(p)
    _check_weights(lw)
    return float(math.exp(2.0 * _lse(lw) - _lse(2.0 * lw)))


# -- transition kernels -------------------------------------------------------

class TransitionKernel:
    """``propose`` returns a trace with new latent values; ``log_density`` scores ``from -> to``."""

    def propose(self, trace: Trace, rng: RngStream) -> Trace:
        raise NotImplementedError

    def log_density(self, src: Trace, dst: Trace) -> float:
        raise NotImplementedError


class IdentityKernel(TransitionKernel):
    def propose(self, trace, rng):
        return trace

    def log_density(self, src, dst):
        same = all(a.value == b.value for a, b in zip(src, dst))
        return 0.0 if same else NEG_INF


class FlipKernel(TransitionKernel):
    """Pick one of ``addresses`` uniformly and move it to a uniformly chosen different category.

    Symmetric: ``q(a -> b) = 1 / (m (n - 1))`` whenever exactly one site differs.
    """

    def __init__(self, addresses, n_categories=2):
        self.addresses = [str(a) for a in addresses]
        self.n = n_categories

    def propose(self, trace, rng):
        addr = self.addresses[rng.integer(len(self.addresses))]
        cur = int(trace.value(addr))
        new = rng.integer(self.n - 1)
        if new >= cur:
            new += 1
        return trace.replace_values({addr: new})

    def log_density(self, src, dst):
        diff = [a for a in self.addresses if src.value(a) != dst.value(a)]
        if len(diff) != 1:
            return NEG_INF
        return -math.log(len(self.addresses) * (self.n - 1))


class IndependentSiteKernel(TransitionKernel):
    """Redraw one categorical site from fixed probabilities, ignoring its current value."""

    def __init__(self, address, probs):
        self.address = str(address)
        self.probs = np.asarray(probs, dtype=float)
        self._cum = np.cumsum(self.probs)

    def propose(self, trace, rng):
        new = int(min(np.searchsorted(self._cum, rng.uniform() * self._cum[-1], side="right"),
                      len(self.probs) - 1))
        return trace.replace_values({self.address: new})

    def log_density(self, src, dst):
        for r in src:
            if r.address != self.address and dst.value(r.address) != r.value:
                return NEG_INF
        p = self.probs[int(dst.value(self.address))]
        return math.log(p) if p > 0 else NEG_INF


# -- moves --------------------------------------------------------------------

def _propose_and_score(f, inputs, sample, kern, ctx):
    proposed = kern.propose(sample.trace, ctx.rng.child("kernel"))
    new = score(f, inputs, proposed, ctx)
    fwd = log_joint(sample.trace) + kern.log_density(sample.trace, new.trace)
    bwd = log_joint(new.trace) + kern.log_density(new.trace, sample.trace)
    return new, bwd, fwd


def move_reweight(f: Model, kern: TransitionKernel):
    """Transformer ``(inputs, sample, ctx) -> sample`` applying the reweighted move.

    ``w' = w * gamma(x') q(x | x') / (gamma(x) q(x' | x))``.
    """

    def transform(inputs, sample: WeightedSample, ctx: EvalContext) -> WeightedSample:
        new, bwd, fwd = _propose_and_score(f, inputs, sample, kern, ctx)
        if sample.log_weight == NEG_INF or bwd == NEG_INF:
            lw = NEG_INF
        else:
            lw = sample.log_weight + (bwd - fwd)
            if lw != lw:
                lw = NEG_INF
        return WeightedSample(new.output, new.trace, lw, sample.proposal)

    return transform


def mh_step(f, kern, inputs, sample, ctx):
    """One Metropolis-Hastings step; returns ``(sample, accepted)``. The weight is untouched."""
    new, bwd, fwd = _propose_and_score(f, inputs, sample, kern, ctx)
    log_ratio = bwd - fwd
    if log_ratio != log_ratio or log_ratio == NEG_INF:
        return sample, False
    if log_ratio >= 0.0 or math.log(ctx.rng.child("accept").uniform()) < log_ratio:
        return WeightedSample(new.output, new.trace, sample.log_weight, sample.proposal), True
    return sample, False


def move_mh(f: Model, kern: TransitionKernel):
    """Transformer applying a Metropolis-Hastings move; output weight equals input weight."""

    def transform(inputs, sample, ctx):
        return mh_step(f, kern, inputs, sample, ctx)[0]

    return transform


def move(f: Model, kern: TransitionKernel, *, mh: bool = False) -> Model:
    """Model running ``f`` then one move (reweighting form unless ``mh``)."""
    transform = move_mh(f, kern) if mh else move_reweight(f, kern)

    def program(inputs, ctx):
        if ctx.score_only:
            return f.program(inputs, ctx)
        s = f.program(inputs, ctx.with_rng(ctx.rng.child("init")))
        return transform(inputs, s, ctx.with_rng(ctx.rng.child("move")))

    return Model(program, f"move({f.name})", f.arity)


# -- SMC ----------------------------------------------------------------------

@dataclass
class SMCOptions:
    resample_threshold: float = 0.5
    scheme: str = "multinomial"
    moves_per_step: int = 0
    kernel: object = None  # callable(step_index) -> TransitionKernel over the full trace


@dataclass
class SMCResult:
    population: Population
    log_evidence_increments: list
    diagnostics: list = field(default_factory=list)

    @property
    def log_evidence(self) -> float:
        return math.fsum(self.log_evidence_increments)


class _Particle:
    __slots__ = ("carry", "lw_global", "lw_steps", "lineage", "trace", "proposal")

    def __init__(self, carry, lw_global, lw_steps, lineage, trace=None, proposal=None):
        self.carry = carry
        self.lw_global = lw_global
        self.lw_steps = lw_steps
        self.lineage = lineage  # (parent, step trace, step proposal) chain, newest first
        self.trace = trace      # materialized full trace, when moves need it
        self.proposal = proposal

    @property
    def log_weight(self):
        return self.lw_global + self.lw_steps

    def materialize(self):
        parts, props = [], []
        node = self.lineage
        while node is not None:
            node, t, q = node
            parts.append(t)
            if q is not None:
                props.append(q)
        parts.reverse()
        props.reverse()
        return merge_all(parts), (merge_all(props) if props else None)


def smc(global_model: Model, steps, k: int, opts: SMCOptions | None = None, *, inputs=(),
        ctx: EvalContext | None = None, seed=0, params=None) -> SMCResult:
    """Sequential Monte Carlo over a carried state.

    Particles are laid out exactly like ``compose(global_model, chain(steps))``:
    global sites under ``left/`` and step ``t`` under ``right/step:t/``, with
    particle ``i`` drawing from substream ``particle:i``. With
    ``resample_threshold=0`` and no moves the population is therefore
    identical to ``run_population`` of that composed model.

    The global model counts as step 0 of the diagnostics and evidence
    increments; ``steps[t]`` is step ``t + 1``.
    """
    opts = opts or SMCOptions()
    if k < 1:
        raise ValueError("K must be at least 1")
    if not 0.0 <= opts.resample_threshold <= 1.0:
        raise ValueError("resample_threshold must lie in [0, 1]")
    if ctx is None:
        ctx = EvalContext(RngStream(seed), params=params)
    steps = list(steps)
    inputs = tuple(inputs)
    bases = [ctx.with_rng(ctx.rng.child(f"particle:{i}")) for i in range(k)]
    rights = [b.scoped("right") for b in bases]

    particles = []
    for b in bases:
        s = b.scoped("left")
        out = global_model.program(inputs, s)
        lt = prefix(out.trace, "left")
        lq = prefix(out.proposal, "left") if out.proposal is not None else None
        particles.append(_Particle(out.output, out.log_weight, 0.0, (None, lt, lq)))

    increments, diagnostics = [], []
    prev = 0.0
    for t in range(len(steps) + 1):
        if t > 0:
            step = steps[t - 1]
            seg = f"step:{t - 1}"
            new = []
            for i, p in enumerate(particles):
                out = step.program((p.carry,), rights[i].scoped(seg))
                st = push_path(out.trace, "right/" + seg)
                sq = push_path(out.proposal, "right/" + seg) if out.proposal is not None else None
                new.append(_Particle(out.output, p.lw_global, p.lw_steps + out.log_weight,
                                     (p.lineage, st, sq)))
            particles = new

        accept_rate = None
        if opts.moves_per_step > 0 and opts.kernel is not None:
            accept_rate = _move_sweeps(global_model, steps[:t], particles, opts, ctx, inputs, t)

        lw = np.array([p.log_weight for p in particles])
        if not np.any(np.isfinite(lw)):
            raise AllWeightsZero(step=t)
        lme = float(_lse(lw) - math.log(k))
        inc = lme - prev
        prev = lme
        increments.append(inc)
        cur_ess = float(math.exp(2.0 * _lse(lw) - _lse(2.0 * lw)))
        do_resample = cur_ess < opts.resample_threshold * k and t < len(steps)
        if do_resample:
            anc = resample_indices(lw, ctx.rng.child(f"resample:{t}"), opts.scheme)
            particles = [_Particle(particles[a].carry, lme, 0.0, particles[a].lineage,
                                   particles[a].trace, particles[a].proposal) for a in anc]
        diagnostics.append({"step": t, "ess": cur_ess, "log_evidence_increment": inc,
                            "resampled": bool(do_resample), "acceptance_rate": accept_rate})

    final = []
    for p in particles:
        trace, proposal = p.materialize()
        final.append(WeightedSample(p.carry, trace, p.log_weight, proposal))
    return SMCResult(Population(final, provenance=f"smc({global_model.name})"), increments, diagnostics)


def _move_sweeps(global_model, done_steps, particles, opts, ctx, inputs, t):
    target = compose(global_model, chain(done_steps))
    kern = opts.kernel(t)
    accepted = 0
    for i, p in enumerate(particles):
        trace, proposal = p.materialize()
        s = WeightedSample(p.carry, trace, p.log_weight, proposal)
        for m in range(opts.moves_per_step):
            mctx = ctx.with_rng(ctx.rng.child(f"particle:{i}").child(f"move:{t}:{m}"))
            s, ok = mh_step(target, kern, inputs, s, mctx)
            accepted += ok
        if s.proposal is not None:
            # proposal sites are rescored at the moved values with their recorded densities
            s = s._replace(proposal=Trace(r._replace(value=s.trace.value(r.address),
                                                     log_prob=r.dist.log_prob(s.trace.value(r.address)))
                                          for r in s.proposal))
        p.carry = s.output
        p.lineage = (None, s.trace, s.proposal)
    return accepted / (len(particles) * opts.moves_per_step)
