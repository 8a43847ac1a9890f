import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from probcomb.distributions import Binding, Categorical, Normal
from probcomb.errors import AllWeightsZero, NonFiniteGradient
from probcomb.estimators import (Adam, ParameterStore, ParamRole, _accumulate, adam_step, grad_phi, grad_theta,
                                 log_evidence, normalized_weights, wake_sleep_epoch)
from probcomb.hmm.models import init_store, problem_builder
from probcomb.hmm.params import HmmParams
from probcomb.inference import Population, importance, run_population
from probcomb.model import primitive
from probcomb.trace import WeightedSample


def pop(log_ws, traces=None):
    traces = traces or [None] * len(log_ws)
    return Population([WeightedSample(None, tr, float(lw), None) for lw, tr in zip(log_ws, traces)])


def mu_store(mu=0.0, role="theta"):
    s = ParameterStore()
    s.add("mu", [mu], role)
    return s


@primitive
def normal_site(t):
    mu = t.params["mu"][0]
    return t.sample("x", Normal(mu, 1.0, (Binding.slice("mu", 0, 1),)))


class TestWeights:
    def test_examples(self):
        assert np.allclose(normalized_weights(np.zeros(4)), 0.25)
        assert normalized_weights(np.array([0.0, -math.inf])).tolist() == [1.0, 0.0]
        assert np.allclose(normalized_weights(np.log([1.0, 3.0])), [0.25, 0.75])

    @given(st.lists(st.floats(-40, 40), min_size=1, max_size=20), st.floats(-100, 100))
    def test_shift_invariance_and_sum(self, lws, c):
        w = normalized_weights(np.array(lws))
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.allclose(w, normalized_weights(np.array(lws) + c), rtol=1e-9, atol=1e-15)

    def test_all_zero(self):
        with pytest.raises(AllWeightsZero):
            normalized_weights(np.array([-math.inf]))

    def test_log_evidence(self, bern):
        assert log_evidence(np.full(5, math.log(0.3))) == pytest.approx(math.log(0.3), abs=1e-15)
        assert log_evidence(np.array([-2.5])) == -2.5
        p = run_population(bern, (), 10_000, seed=4)
        w = np.exp(p.log_weights)
        assert abs(log_evidence(p) - math.log(0.55)) <= 4 * w.std(ddof=1) / math.sqrt(len(w)) / w.mean()


class TestGradTheta:
    def test_score_at_mean_is_zero(self):
        store = mu_store(0.7)
        s = normal_site.run(seed=0, params=store)
        tr = s.trace.replace_values({"x": 0.7})
        store.zero_grad()
        grad_theta(pop([0.0], [tr]), store)
        assert store.grad("mu")[0] == 0.0

    def test_weights_one_zero(self):
        store = mu_store(0.0)
        a = normal_site.run(seed=1, params=store).trace
        b = normal_site.run(seed=2, params=store).trace
        grad_theta(pop([0.0, -math.inf], [a, b]), store)
        assert store.grad("mu")[0] == a.value("x")  # score of N(x; mu, 1) in mu is x - mu

    def test_weighted_sum(self):
        store = mu_store(0.5)
        trs = [normal_site.run(seed=i, params=store).trace for i in range(3)]
        lw = np.log([0.2, 0.3, 0.5])
        grad_theta(pop(lw, trs), store)
        expect = sum(w * (t.value("x") - 0.5) for w, t in zip([0.2, 0.3, 0.5], trs))
        assert store.grad("mu")[0] == pytest.approx(expect, abs=1e-14)


class TestGradPhi:
    def test_single_particle_is_negative_score(self):
        store = mu_store(0.2, "phi")
        tr = normal_site.run(seed=3, params=store).trace
        grad_phi(pop([0.0]), [tr], store)
        assert store.grad("mu")[0] == -(tr.value("x") - 0.2)

    def test_sign_bitwise(self):
        store, other = mu_store(0.2, "phi"), mu_store(0.2, "phi")
        trs = [normal_site.run(seed=i, params=store).trace for i in range(5)]
        lw = np.linspace(-1, 1, 5)
        grad_phi(pop(lw), trs, store)
        _accumulate(trs, normalized_weights(lw), other, ParamRole.PHI, 1.0)
        assert store.grad("mu")[0] == -other.grad("mu")[0]

    def test_optimum_when_proposal_matches_target(self):
        store = ParameterStore()
        store.add("q", [0.4, -0.3], "phi")
        q = Categorical.from_logits(np.append(store["q"], 0.0), (Binding.slice("q", 0, 2),))
        f = primitive(lambda t: t.sample("z", Categorical(q.probs)))
        g = primitive(lambda t: t.sample("z", q))
        grads = []
        for rep in range(400):
            p = run_population(importance(f, g), (), 8, seed=rep)
            store.zero_grad()
            grad_phi(p, [s.proposal for s in p], store)
            grads.append(store.grad("q").copy())
        grads = np.array(grads)
        se = grads.std(axis=0, ddof=1) / math.sqrt(len(grads))
        assert np.all(np.abs(grads.mean(axis=0)) <= 4 * se)

    def test_alignment_checked(self):
        with pytest.raises(ValueError):
            grad_phi(pop([0.0, 0.0]), [None], mu_store())


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        store = mu_store(1.25)
        before = store["mu"].copy()
        adam_step(store, Adam(lr=0.1))
        assert np.array_equal(store["mu"], before)

    @pytest.mark.parametrize("role,sign", [("theta", 1.0), ("phi", -1.0)])
    def test_constant_gradient_step_tends_to_lr(self, role, sign):
        store, opt = mu_store(0.0, role), Adam(lr=0.01)
        prev = 0.0
        for _ in range(2000):
            store.grad("mu")[...] = 3.0
            adam_step(store, opt)
            step = store["mu"][0] - prev
            prev = store["mu"][0]
        assert step == pytest.approx(sign * 0.01, rel=1e-6)

    def test_quadratic_bowl(self):
        # maximize -x^2 as a Theta entry
        store, opt = mu_store(1.0), Adam(lr=0.05)
        for i in range(2000):
            store.grad("mu")[...] = -2.0 * store["mu"]
            adam_step(store, opt)
            if abs(store["mu"][0]) < 1e-3:
                break
        assert abs(store["mu"][0]) < 1e-3 and i < 2000

    def test_non_finite_gradient(self):
        store = mu_store()
        store.grad("mu")[...] = math.nan
        with pytest.raises(NonFiniteGradient):
            adam_step(store, Adam())

    def test_store_json_round_trip(self):
        store = init_store(3, np.arange(6.0).reshape(3, 2), 0.5)
        back = ParameterStore.from_json(store.to_json())
        for n in store.names():
            assert np.array_equal(back[n], store[n]) and back.role(n) is store.role(n)


def _hmm_data(params, n, T, seed):
    gen = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        z = gen.choice(len(params.pi0), p=params.pi0)
        ys = []
        for _ in range(T):
            ys.append(gen.normal(params.means[z], params.obs_sd))
            z = gen.choice(len(params.pi0), p=params.A[z])
        out.append(np.array(ys))
    return out


TRUE = HmmParams(np.array([0.5, 0.5]), np.array([[0.85, 0.15], [0.25, 0.75]]),
                 np.array([[0.0, 0.0], [1.5, 1.5]]), 0.5)


def _true_store():
    store = init_store(2, TRUE.means, TRUE.obs_sd)
    store.set("pi0_logits", np.log(TRUE.pi0[:1] / TRUE.pi0[1]))
    store.set("A_logits", np.log(TRUE.A[:, :1] / TRUE.A[:, 1:]))
    return store


class TestWakeSleep:
    data = _hmm_data(TRUE, 3, 12, seed=0)

    def test_zero_lr_leaves_store_bitwise(self):
        store = _true_store()
        before = {n: store[n].copy() for n in store.names()}
        rec = wake_sleep_epoch(self.data, problem_builder(2, TRUE.obs_sd), 16, store, Adam(lr=0.0), batch_size=2)
        assert all(np.array_equal(before[n], store[n]) for n in store.names())
        assert math.isfinite(rec["mean_log_evidence"]) and rec["wall_ms"] is None

    def test_evidence_trend_at_true_parameters(self):
        store, opt = _true_store(), Adam(lr=0.01)
        build = problem_builder(2, TRUE.obs_sd)
        ev = [wake_sleep_epoch(self.data, build, 32, store, opt, batch_size=3).get("mean_log_evidence")
              for _ in range(10)]
        slope = np.polyfit(np.arange(10), ev, 1)[0]
        assert slope >= -0.05

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            wake_sleep_epoch([], problem_builder(2, 0.5), 4, _true_store(), Adam())

    def test_workers_do_not_change_results(self):
        build = problem_builder(2, TRUE.obs_sd)
        a, b = _true_store(), _true_store()
        ra = wake_sleep_epoch(self.data, build, 8, a, Adam(lr=0.05), workers=1)
        rb = wake_sleep_epoch(self.data, build, 8, b, Adam(lr=0.05), workers=2)
        assert ra == rb
        assert all(np.array_equal(a[n], b[n]) for n in a.names())
