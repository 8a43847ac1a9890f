"""Models as programs returning properly weighted samples, and the model combinators.

A :class:`Model` wraps ``program(inputs, ctx) -> WeightedSample``. Combinators
build new models from old ones before any evaluation happens; evaluation is
dynamic and produces a fresh trace each time.

Sub-model evaluations run under a scoped context: the scope segment is added
to the address prefix (so conditioning lookups find the right records) and
names the child random stream, which keeps results independent of how the
evaluation is scheduled.
"""

from __future__ import annotations

import enum
import inspect

from .distributions import Categorical
from .parallel import map_ordered
from .rng import RngStream
from .trace import Trace, WeightedSample, factor_at, merge, merge_all, observe_at, prefix, sample_at


class Mode(enum.Enum):
    GENERATE = "generate"
    SCORE_ONLY = "score_only"


class EvalContext:
    """Evaluation machinery handed down through a model evaluation."""

    __slots__ = ("rng", "conditioning", "params", "mode", "scope")

    def __init__(self, rng, conditioning=None, params=None, mode=Mode.GENERATE, scope=""):
        self.rng = rng
        self.conditioning = conditioning
        self.params = params
        self.mode = mode
        self.scope = scope

    @property
    def score_only(self):
        return self.mode is Mode.SCORE_ONLY

    def lookup(self, addr):
        c = self.conditioning
        if c is None:
            return None
        return c._records.get(self.scope + addr)

    def scoped(self, segment: str) -> "EvalContext":
        return EvalContext(self.rng.child(segment), self.conditioning, self.params, self.mode,
                           self.scope + segment + "/")

    def with_rng(self, rng) -> "EvalContext":
        return EvalContext(rng, self.conditioning, self.params, self.mode, self.scope)

    def conditioned(self, trace, *, rng=None, score_only=False) -> "EvalContext":
        """Fresh top-level context that replays values from ``trace``."""
        return EvalContext(rng if rng is not None else self.rng, trace, self.params,
                           Mode.SCORE_ONLY if score_only else Mode.GENERATE, "")


class Tracer:
    """Handle passed to primitive model bodies."""

    __slots__ = ("trace", "ctx", "log_weight")

    def __init__(self, ctx):
        self.trace = Trace()
        self.ctx = ctx
        self.log_weight = 0.0

    @property
    def params(self):
        return self.ctx.params

    def sample(self, addr, dist):
        return sample_at(self.trace, addr, dist, self.ctx)

    def observe(self, addr, dist, value, value_bindings=()):
        lp = observe_at(self.trace, addr, dist, value, value_bindings)
        self.log_weight += lp
        return lp

    def factor(self, addr, log_weight):
        lp = factor_at(self.trace, addr, log_weight)
        self.log_weight += lp
        return lp


class Model:
    """A program value: ``(inputs, ctx) -> WeightedSample``."""

    __slots__ = ("program", "name", "arity")

    def __init__(self, program, name="model", arity=None):
        self.program = program
        self.name = name
        self.arity = arity

    def __call__(self, *inputs, ctx):
        return self.program(inputs, ctx)

    def __repr__(self):
        return f"<Model {self.name}>"

    def run(self, *inputs, seed=0, rng=None, params=None, conditioning=None, score_only=False):
        """Evaluate at top level with a fresh context."""
        ctx = EvalContext(rng if rng is not None else RngStream(seed), conditioning, params,
                          Mode.SCORE_ONLY if score_only else Mode.GENERATE)
        return self.program(inputs, ctx)


def score(model: Model, inputs, trace: Trace, ctx: EvalContext) -> WeightedSample:
    """Re-evaluate ``model`` on the latent values of ``trace`` in score-only mode."""
    return model.program(tuple(inputs), ctx.conditioned(trace, score_only=True))


def _body_arity(body):
    try:
        params = list(inspect.signature(body).parameters.values())
    except (TypeError, ValueError):
        return None
    if any(p.kind in (p.VAR_POSITIONAL, p.VAR_KEYWORD) for p in params):
        return None
    return len(params) - 1


def primitive(body=None, *, name=None):
    """Turn ``body(tracer, *inputs)`` into a likelihood-weighted :class:`Model`.

    Latents are drawn from their prior and the weight is the sum of observed
    log-densities. Usable as ``@primitive`` or ``@primitive(name=...)``.
    """

    def wrap(body):
        def program(inputs, ctx):
            t = Tracer(ctx)
            out = body(t, *inputs)
            return WeightedSample(out, t.trace, t.log_weight)

        return Model(program, name or getattr(body, "__name__", "primitive"), _body_arity(body))

    return wrap if body is None else wrap(body)


identity = primitive(lambda t, x: x, name="identity")


def _merge_proposals(samples, segments):
    if all(s.proposal is None for s in samples):
        return None
    return merge_all(prefix(s.proposal, seg) for s, seg in zip(samples, segments) if s.proposal is not None)


def compose(f: Model, g: Model) -> Model:
    """Run ``f`` on the inputs, then ``g`` on ``f``'s output; weights multiply."""

    def program(inputs, ctx):
        a = f.program(inputs, ctx.scoped("left"))
        b = g.program((a.output,), ctx.scoped("right"))
        trace = merge(prefix(a.trace, "left"), prefix(b.trace, "right"))
        return WeightedSample(b.output, trace, a.log_weight + b.log_weight,
                              _merge_proposals((a, b), ("left", "right")))

    return Model(program, f"compose({f.name},{g.name})", f.arity)


def partial(f: Model, y1) -> Model:
    """Fix the first input of ``f``."""
    if f.arity is not None and f.arity < 1:
        raise TypeError(f"{f.name} takes no inputs to bind")

    def program(inputs, ctx):
        if f.arity is not None and len(inputs) != f.arity - 1:
            raise TypeError(f"partial({f.name}) expects {f.arity - 1} inputs, got {len(inputs)}")
        return f.program((y1,) + tuple(inputs), ctx)

    return Model(program, f"partial({f.name})", None if f.arity is None else f.arity - 1)


def bind_last(f: Model, y) -> Model:
    """Fix the last input of ``f``; ``bind_last(f, y)(x) == f(x, y)``."""

    def program(inputs, ctx):
        return f.program(tuple(inputs) + (y,), ctx)

    return Model(program, f"bind_last({f.name})", None if f.arity is None else f.arity - 1)


def map_combinator(f: Model, ys, workers: int = 1) -> Model:
    """Evaluate ``f`` independently on every item; outputs listed, weights multiply."""
    ys = list(ys)
    if not ys:
        raise ValueError("map needs at least one item")

    def program(inputs, ctx):
        def item(n):
            return f.program((ys[n],), ctx.scoped(f"item:{n}"))

        samples = map_ordered(item, len(ys), workers)
        segs = [f"item:{n}" for n in range(len(ys))]
        trace = merge_all(prefix(s.trace, seg) for s, seg in zip(samples, segs))
        total = 0.0
        for s in samples:
            total += s.log_weight
        return WeightedSample([s.output for s in samples], trace, total, _merge_proposals(samples, segs))

    return Model(program, f"map({f.name})", 0)


def _fold_program(step_call, n_steps):
    def program(inputs, ctx):
        (carry,) = inputs
        samples, segs = [], []
        total = 0.0
        for n in range(n_steps):
            seg = f"step:{n}"
            s = step_call(n, carry, ctx.scoped(seg))
            carry = s.output
            total += s.log_weight
            samples.append(s)
            segs.append(seg)
        trace = merge_all(prefix(s.trace, seg) for s, seg in zip(samples, segs))
        return WeightedSample(carry, trace, total, _merge_proposals(samples, segs))

    return program


def fold(f: Model, ys) -> Model:
    """Model taking the initial carry; step ``n`` runs ``f(carry, ys[n])`` under ``step:n``."""
    ys = list(ys)
    return Model(_fold_program(lambda n, c, ctx: f.program((c, ys[n]), ctx), len(ys)),
                 f"fold({f.name})", 1)


def chain(models) -> Model:
    """Model taking a carry and threading it through ``models`` in order, under ``step:n``."""
    models = list(models)
    return Model(_fold_program(lambda n, c, ctx: models[n].program((c,), ctx), len(models)),
                 "chain", 1)


def reduce_combinator(f: Model, init, ys) -> Model:
    """Left fold of ``f`` over ``ys`` starting from ``init``."""
    return partial(fold(f, ys), init)


def ssm(step: Model, prior: Model, ys) -> Model:
    """State-space model: ``prior`` produces the initial state, ``step`` advances it per item."""
    return compose(prior, fold(step, ys))


def hmm(global_model: Model, step: Model, ys) -> Model:
    """Hidden Markov model: global parameters ride in the carried state of an ssm.

    ``global_model`` outputs the initial carry (parameters plus an empty
    previous state); ``step`` samples the discrete state and observes the
    emission.
    """
    m = ssm(step, global_model, ys)
    m.name = f"hmm({global_model.name},{step.name})"
    return m


def mixture(weights: Model, components) -> Model:
    """Sample a component index from ``weights``' output, then run that component."""
    components = list(components)

    def program(inputs, ctx):
        w = weights.program(inputs, ctx.scoped("weights"))
        probs = w.output if isinstance(w.output, Categorical) else Categorical(w.output)
        tr = Trace()
        k = sample_at(tr, "index", probs, ctx.with_rng(ctx.rng.child("index")))
        seg = f"comp:{k}"
        c = components[k].program(inputs, ctx.scoped(seg))
        trace = merge_all([prefix(w.trace, "weights"), tr, prefix(c.trace, seg)])
        return WeightedSample(c.output, trace, w.log_weight + c.log_weight,
                              _merge_proposals((w, c), ("weights", seg)))

    return Model(program, "mixture", weights.arity)
