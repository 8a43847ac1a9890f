import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probcomb.distributions import Categorical, Normal
from probcomb.errors import MissingLatent
from probcomb.hmm.exact import exact_hmm
from probcomb.hmm.models import fixed_globals, hmm_model
from probcomb.hmm.params import HmmParams
from probcomb.model import (EvalContext, Model, chain, compose, fold, identity, map_combinator, mixture,
                            partial, primitive, reduce_combinator, score, ssm)
from probcomb.rng import RngStream
from probcomb.trace import Role, Trace, WeightedSample


def constant_weight(lw, name="const"):
    return primitive(lambda t, x: (t.factor("f", lw), x)[1], name=name)


@primitive
def gauss_obs(t):
    z = t.sample("z", Normal(0, 1))
    t.observe("y", Normal(z, 1), 0.0)
    return z


@primitive
def pair(t, a, b):
    t.sample("u", Normal(a, 1))
    return (a, b)


def mean_weight(model, n, inputs=(), seed=0):
    root = RngStream(seed)
    w = np.array([math.exp(model.program(inputs, EvalContext(root.child(i))).log_weight) for i in range(n)])
    return w.mean(), w.std(ddof=1) / math.sqrt(n)


class TestPrimitive:
    def test_no_observe_weight_zero(self):
        m = primitive(lambda t: t.sample("z", Normal(0, 1)))
        assert m.run(seed=3).log_weight == 0.0

    def test_single_site_likelihood(self):
        s = gauss_obs.run(seed=5)
        assert s.log_weight == Normal(s.output, 1).log_prob(0.0)

    def test_bernoulli_pair_normalizer(self, bern):
        mean, se = mean_weight(bern, 100_000)
        assert abs(mean - 0.55) <= 3 * se

    def test_arity_inferred(self):
        assert gauss_obs.arity == 0 and pair.arity == 2

    def test_purity(self):
        a, b = gauss_obs.run(seed=11), gauss_obs.run(seed=11)
        assert a.trace == b.trace and a.log_weight == b.log_weight


class TestCompose:
    def test_weightless(self):
        f = primitive(lambda t, x: t.sample("a", Normal(x, 1)))
        assert compose(f, f).run(0.0, seed=0).log_weight == 0.0

    def test_weights_multiply(self):
        s = compose(constant_weight(math.log(2)), constant_weight(math.log(3))).run(1.0)
        assert s.log_weight == pytest.approx(math.log(6), abs=1e-15)
        assert s.trace.addresses() == ["left/f", "right/f"]

    def test_identity_unit_law(self):
        m = primitive(lambda t, x: (t.observe("y", Normal(t.sample("z", Normal(x, 1)), 1), 0.3), x)[1])
        a, b = compose(identity, m).run(0.5, seed=2), m.run(0.5, seed=2)
        assert a.output == b.output
        lw = [compose(identity, m).run(0.5, seed=i).log_weight for i in range(2000)]
        lw2 = [m.run(0.5, seed=i).log_weight for i in range(2000)]
        assert abs(np.mean(np.exp(lw)) - np.mean(np.exp(lw2))) < 4 * np.std(np.exp(lw)) / math.sqrt(2000) * 1.5


class TestPartial:
    def test_definitional(self):
        ctx = lambda: EvalContext(RngStream(4))  # noqa: E731
        assert partial(pair, 1.0).program((2.0,), ctx()).trace == pair.program((1.0, 2.0), ctx()).trace

    def test_nested(self):
        s = partial(partial(pair, 1.0), 2.0).run(seed=1)
        assert s.output == (1.0, 2.0) and s.trace == pair.run(1.0, 2.0, seed=1).trace

    def test_arity_mismatch(self):
        with pytest.raises(TypeError):
            partial(gauss_obs, 1.0)
        with pytest.raises(TypeError):
            partial(pair, 1.0).run(1.0, 2.0)

    def test_weight_preserved(self, bern):
        m = partial(Model(lambda inputs, ctx: bern.program((), ctx), "b", 1), None)
        mean, se = mean_weight(m, 50_000)
        assert abs(mean - 0.55) <= 4 * se


class TestMap:
    def test_single_item(self):
        f = primitive(lambda t, y: t.sample("z", Normal(y, 1)))
        a = map_combinator(f, [0.5]).run(seed=3)
        assert a.trace.addresses() == ["item:0/z"]

    def test_weights_add(self):
        f = primitive(lambda t, y: t.factor("f", y))
        assert map_combinator(f, [math.log(2), math.log(3)]).run().log_weight == pytest.approx(math.log(6))

    def test_product_normalizer(self, bern):
        m = map_combinator(Model(lambda inputs, ctx: bern.program((), ctx), "b", 1), [None, None])
        mean, se = mean_weight(m, 100_000)
        assert abs(mean - 0.3025) <= 3 * se

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            map_combinator(identity, [])

    def test_workers_do_not_change_results(self):
        f = primitive(lambda t, y: t.sample("z", Normal(y, 1)))
        a = map_combinator(f, [0.0, 1.0, 2.0], workers=1).run(seed=8)
        b = map_combinator(f, [0.0, 1.0, 2.0], workers=2).run(seed=8)
        assert a.output == b.output and a.trace == b.trace


class TestFolds:
    inc = primitive(lambda t, c, y: c + y, name="inc")

    def test_empty_fold(self):
        s = reduce_combinator(self.inc, 7, []).run()
        assert s.output == 7 and s.log_weight == 0.0 and len(s.trace) == 0

    def test_singleton(self):
        f = primitive(lambda t, c, y: c + t.sample("d", Normal(y, 1)))
        a = reduce_combinator(f, 1.0, [2.0]).run(seed=2)
        assert a.trace.addresses() == ["step:0/d"]
        assert a.output == 1.0 + a.trace.value("step:0/d")

    def test_counter(self):
        assert reduce_combinator(self.inc, 0, [1, 1, 1]).run().output == 3

    def test_chain_threads_carry(self):
        add = [primitive(lambda t, c, k=k: c + k) for k in (1, 2, 3)]
        assert chain(add).run(10).output == 16

    def test_ssm(self):
        prior = primitive(lambda t: t.sample("x0", Normal(0, 1)))
        step = primitive(lambda t, x, y: (t.observe("y", Normal(x, 1), y), x)[1])
        s = ssm(step, prior, [0.1, 0.2]).run(seed=1)
        assert s.trace.addresses() == ["left/x0", "right/step:0/y", "right/step:1/y"]


class TestHmmAndMixture:
    params = HmmParams(np.array([0.5, 0.5]), np.array([[0.9, 0.1], [0.3, 0.7]]), np.array([[0.0, 0.0], [1.0, 1.0]]), 0.6)

    def test_empty_hmm(self):
        s = hmm_model(fixed_globals(self.params), np.zeros((0, 2))).run()
        assert s.log_weight == 0.0 and all(a.startswith("left/") for a in s.trace.addresses())

    def test_single_state(self):
        p = HmmParams(np.array([1.0]), np.array([[1.0]]), np.array([[0.2, -0.1]]), 0.5)
        ys = np.array([[0.0, 0.0], [0.5, 0.1], [0.3, 0.3]])
        s = hmm_model(fixed_globals(p), ys).run(seed=0)
        assert s.log_weight == pytest.approx(exact_hmm(p, ys).log_z, abs=1e-12)

    def test_two_state_normalizer(self):
        ys = np.array([[0.1, 0.0], [0.8, 1.1]])
        mean, se = mean_weight(hmm_model(fixed_globals(self.params), ys), 50_000)
        assert abs(mean - math.exp(exact_hmm(self.params, ys).log_z)) <= 4 * se

    def test_mixture(self):
        weights = primitive(lambda t, x: [0.25, 0.75])
        comps = [constant_weight(math.log(2), "a"), constant_weight(math.log(4), "b")]
        m = mixture(weights, comps)
        s = m.run(0.0, seed=3)
        k = s.trace.value("index")
        assert s.trace.addresses() == ["index", f"comp:{k}/f"]
        mean, se = mean_weight(m, 20_000, inputs=(0.0,))
        assert abs(mean - (0.25 * 2 + 0.75 * 4)) <= 4 * se


class TestScoring:
    def test_replay_determinism(self):
        s = gauss_obs.run(seed=6)
        r = score(gauss_obs, (), s.trace, EvalContext(RngStream(99)))
        assert r.trace.log_joint() == s.trace.log_joint() and r.output == s.output
        assert all(rec.role in (Role.REPLAYED, Role.OBSERVED) for rec in r.trace)

    def test_score_only_requires_latents(self):
        with pytest.raises(MissingLatent):
            score(gauss_obs, (), Trace(), EvalContext(RngStream(0)))


# -- random combinator trees --------------------------------------------------------

def _leaf():
    return primitive(lambda t, x: (t.observe("y", Normal(x, 1), 0.5), t.sample("x", Normal(x, 1)))[1], name="leaf")


def _mapped(f):
    inner = map_combinator(f, [0.0, 1.0])

    def program(inputs, ctx):
        s = inner.program((), ctx)
        return WeightedSample(float(sum(s.output)), s.trace, s.log_weight, s.proposal)

    return Model(program, "mapped", 1)


def _weights():
    return primitive(lambda t, x: [0.5, 0.5], name="w")


trees = st.recursive(
    st.just("leaf"),
    lambda kids: st.one_of(
        st.tuples(st.just("compose"), kids, kids),
        st.tuples(st.just("chain"), st.lists(kids, min_size=1, max_size=3)),
        st.tuples(st.just("mixture"), kids, kids),
        st.tuples(st.just("map"), kids),
    ),
    max_leaves=8,
)


def build(shape, depth=0):
    if shape == "leaf" or depth >= 5:
        return _leaf()
    kind = shape[0]
    if kind == "compose":
        return compose(build(shape[1], depth + 1), build(shape[2], depth + 1))
    if kind == "chain":
        return chain([build(s, depth + 1) for s in shape[1]])
    if kind == "mixture":
        return mixture(_weights(), [build(shape[1], depth + 1), build(shape[2], depth + 1)])
    return _mapped(build(shape[1], depth + 1))


class TestCombinatorTrees:
    @given(trees, st.integers(0, 2**32))
    @settings(max_examples=60, deadline=None)
    def test_disjoint_addresses_and_weight_bookkeeping(self, shape, seed):
        m = build(shape)
        s = m.run(0.0, seed=seed)  # merge raises on any collision
        assert s.log_weight == pytest.approx(s.trace.observed_log_prob(), abs=1e-9)
        r = score(m, (0.0,), s.trace, EvalContext(RngStream(seed + 1)))
        assert r.trace.log_joint() == pytest.approx(s.trace.log_joint(), abs=1e-12)
        assert r.trace.addresses() == s.trace.addresses()
