import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probcomb.distributions import Categorical, Normal
from probcomb.errors import AllWeightsZero, UnsupportedProposal
from probcomb.hmm.exact import exact_hmm
from probcomb.hmm.models import fixed_globals, smc_steps
from probcomb.inference import (FlipKernel, IdentityKernel, Population, SMCOptions, ess, importance, log_mean_exp,
                                move, move_mh, move_reweight, resample, run_population, smc)
from probcomb.model import EvalContext, chain, compose, primitive, score
from probcomb.rng import RngStream
from probcomb.selfcheck import SMALL_HMM, SMALL_OBS
from probcomb.trace import WeightedSample

UNIFORM = Categorical([0.5, 0.5])


@primitive
def target(t):
    # gamma(0) = 1.4, gamma(1) = 0.6
    x = t.sample("x", UNIFORM)
    t.factor("lik", math.log((2.8, 1.2)[x]))
    return x


@primitive
def uniform_proposal(t):
    return t.sample("x", UNIFORM)


@primitive
def two_state(t):
    # gamma = (1, 3) up to the uniform prior
    x = t.sample("x", UNIFORM)
    t.factor("f", math.log((1.0, 3.0)[x]))
    return x


def pop(log_ws):
    return Population([WeightedSample(i, None, float(lw), None) for i, lw in enumerate(log_ws)])


class TestImportance:
    def test_example_weight(self):
        m = importance(target, uniform_proposal)
        for seed in range(20):
            s = m.run(seed=seed)
            assert s.log_weight == pytest.approx(math.log((1.4, 0.6)[s.output] / 0.5), abs=1e-14)
            if s.output == 1:
                assert math.exp(s.log_weight) == pytest.approx(1.2)

    def test_unbiased(self):
        m = importance(target, uniform_proposal)
        w = np.exp([m.run(seed=i).log_weight for i in range(20_000)])
        assert abs(w.mean() - 2.0) <= 4 * w.std(ddof=1) / math.sqrt(len(w))

    def test_self_proposal_is_likelihood_weighting(self, bern):
        prop = primitive(lambda t: t.sample("z", Categorical([0.5, 0.5])))
        for seed in range(10):
            s = importance(bern, prop).run(seed=seed)
            assert s.log_weight == pytest.approx(s.trace.observed_log_prob())

    def test_zero_overlap_is_neg_inf(self):
        f = primitive(lambda t: t.sample("x", Categorical([1.0, 0.0])))
        g = primitive(lambda t: t.sample("x", Categorical([0.0, 1.0])))
        assert importance(f, g).run().log_weight == -math.inf

    def test_observed_latent_mismatch(self, bern):
        g = primitive(lambda t: (t.sample("z", UNIFORM), t.sample("y", UNIFORM))[0])
        with pytest.raises(UnsupportedProposal):
            importance(bern, g).run()

    def test_missing_target_latents_drawn_from_target(self):
        f = primitive(lambda t: (t.sample("x", UNIFORM), t.sample("extra", Normal(0, 1)))[0])
        s = importance(f, uniform_proposal).run(seed=4)
        assert "extra" in s.trace and s.log_weight == pytest.approx(0.0)


class TestPopulation:
    def test_k1_matches_substream_zero(self, bern):
        p = run_population(bern, (), 1, seed=9)
        direct = bern.program((), EvalContext(RngStream(9).child("particle:0")))
        assert p[0].trace == direct.trace

    def test_deterministic(self, bern):
        a, b = run_population(bern, (), 50, seed=2), run_population(bern, (), 50, seed=2)
        assert np.array_equal(a.log_weights, b.log_weights)

    def test_log_evidence(self, bern):
        p = run_population(bern, (), 10_000, seed=0)
        w = np.exp(p.log_weights)
        se = w.std(ddof=1) / math.sqrt(len(w)) / w.mean()
        assert abs(log_mean_exp(p) - math.log(0.55)) <= 4 * se

    def test_k_validated(self, bern):
        with pytest.raises(ValueError):
            run_population(bern, (), 0)


class TestResample:
    def test_mean_weight_example(self, rng):
        out = resample(pop(np.log([1.0, 2.0, 3.0])), rng)
        assert all(math.exp(p.log_weight) == pytest.approx(2.0, abs=1e-15) for p in out)

    def test_equal_weights(self, rng):
        out = resample(pop([0.0, 0.0]), rng)
        assert all(p.log_weight == 0.0 for p in out)

    def test_ancestor_probability(self):
        root = RngStream(5)
        n = 100_000
        picks = np.concatenate([resample(pop(np.log([1.0, 3.0])), root.child(i)).ancestors for i in range(n // 2)])
        p = picks.mean()
        assert abs(p - 0.75) <= 4 * math.sqrt(0.75 * 0.25 / len(picks))

    @pytest.mark.parametrize("scheme", ["multinomial", "systematic"])
    def test_all_zero_rejected(self, rng, scheme):
        with pytest.raises(AllWeightsZero):
            resample(pop([-math.inf, -math.inf]), rng, scheme)

    def test_unknown_scheme(self, rng):
        with pytest.raises(ValueError):
            resample(pop([0.0]), rng, "stratified-ish")

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=20), st.integers(0, 2**32))
    @settings(max_examples=100, deadline=None)
    def test_mean_weight_identity(self, lws, seed):
        out = resample(pop(lws), RngStream(seed), "systematic")
        assert {p.log_weight for p in out} == {log_mean_exp(np.array(lws))}
        assert all(np.isfinite(lws[a]) for a in out.ancestors)


class TestEss:
    def test_examples(self):
        assert ess(pop([0.0] * 7)) == pytest.approx(7)
        assert ess(pop([0.0, -math.inf, -math.inf])) == pytest.approx(1)
        assert ess(pop(np.log([1.0, 3.0]))) == pytest.approx(1.6)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
    def test_range(self, lws):
        e = ess(np.array(lws))
        assert 1 - 1e-9 <= e <= len(lws) + 1e-9


class TestMoves:
    def _start(self, seed=0):
        return two_state.program((), EvalContext(RngStream(seed)))._replace(log_weight=0.37)

    def test_symmetric_reweight_ratio(self):
        s = self._start()
        out = move_reweight(two_state, FlipKernel(["x"]))((), s, EvalContext(RngStream(1)))
        expect = s.log_weight + out.trace.log_joint() - s.trace.log_joint()
        assert out.log_weight == pytest.approx(expect, abs=1e-12)

    def test_identity_kernel_keeps_weight(self):
        s = self._start()
        out = move_reweight(two_state, IdentityKernel())((), s, EvalContext(RngStream(1)))
        assert out.log_weight == s.log_weight and out.output == s.output

    def test_mh_weight_bitwise(self):
        tr = move_mh(two_state, FlipKernel(["x"]))
        for seed in range(50):
            s = self._start(seed)
            assert tr((), s, EvalContext(RngStream(seed + 100))).log_weight == s.log_weight

    def test_mh_rejects_zero_density(self):
        m = primitive(lambda t: t.sample("x", Categorical([1.0, 0.0])))
        s = m.run()
        for seed in range(20):
            out = move_mh(m, FlipKernel(["x"]))((), s, EvalContext(RngStream(seed)))
            assert out.output == 0

    @pytest.mark.parametrize("start", [0, 1])
    def test_mh_occupancy(self, start):
        tr = move_mh(two_state, FlipKernel(["x"]))
        s = score_at(start)
        root = RngStream(17 + start)
        n, hits = 10_000, 0
        for i in range(n):
            s = tr((), s, EvalContext(root.child(i)))
            hits += s.output
        assert abs(hits / n - 0.75) <= 4 * math.sqrt(0.75 * 0.25 / n)

    def test_move_model_preserves_normalizer(self, bern):
        m = move(bern, FlipKernel(["z"]))
        w = np.exp([m.run(seed=i).log_weight for i in range(20_000)])
        assert abs(w.mean() - 0.55) <= 4 * w.std(ddof=1) / math.sqrt(len(w))


def score_at(x):
    base = two_state.run(seed=0).trace
    return score(two_state, (), base.replace_values({"x": x}), EvalContext(RngStream(0)))


class TestSMC:
    glob = fixed_globals(SMALL_HMM)
    steps = smc_steps(SMALL_OBS)

    def test_tau_zero_is_importance_sampling(self):
        res = smc(self.glob, self.steps, 16, SMCOptions(resample_threshold=0.0), seed=3)
        ref = run_population(compose(self.glob, chain(self.steps)), (), 16, seed=3)
        for a, b in zip(res.population, ref):
            assert a.trace == b.trace
            assert a.log_weight == pytest.approx(b.log_weight, abs=1e-12)

    def test_telescoping(self):
        res = smc(self.glob, self.steps, 32, SMCOptions(resample_threshold=0.0), seed=1)
        assert res.log_evidence == pytest.approx(log_mean_exp(res.population), abs=1e-12)

    def test_k1(self):
        res = smc(self.glob, self.steps, 1, SMCOptions(resample_threshold=1.0), seed=2)
        s = res.population[0]
        assert s.log_weight == pytest.approx(s.trace.observed_log_prob(), abs=1e-12)

    def test_diagnostics_schema(self):
        res = smc(self.glob, self.steps, 8, seed=0)
        assert [d["step"] for d in res.diagnostics] == list(range(len(SMALL_OBS) + 1))
        for d in res.diagnostics:
            assert set(d) == {"step", "ess", "log_evidence_increment", "resampled", "acceptance_rate"}
            assert 1 - 1e-9 <= d["ess"] <= 8 + 1e-9

    def test_evidence_close_to_exact(self):
        exact = exact_hmm(SMALL_HMM, SMALL_OBS).log_z
        est = [smc(self.glob, self.steps, 512, seed=s).log_evidence for s in range(5)]
        assert abs(np.mean(est) - exact) < 0.05

    def test_moves_keep_layout(self):
        opts = SMCOptions(moves_per_step=1, kernel=lambda t: FlipKernel([f"right/step:{t - 1}/z"]) if t else
                          IdentityKernel())
        res = smc(self.glob, self.steps, 8, opts, seed=0)
        assert all(d["acceptance_rate"] is not None for d in res.diagnostics)
        layout = compose(self.glob, chain(self.steps)).run(seed=0).trace.addresses()
        for s in res.population:
            assert s.trace.addresses() == layout and math.isfinite(s.log_weight)

    def test_collapse_reports_step(self):
        dead = primitive(lambda t, c: (t.factor("f", -math.inf), c)[1])
        with pytest.raises(AllWeightsZero) as e:
            smc(self.glob, [dead], 4, seed=0)
        assert "1" in str(e.value)

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            smc(self.glob, self.steps, 4, SMCOptions(resample_threshold=1.5))
