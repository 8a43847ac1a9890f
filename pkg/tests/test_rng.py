import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probcomb.rng import RngStream


class TestRngStream:
    def test_same_seed_same_draws(self):
        a, b = RngStream(7), RngStream(7)
        assert [a.uniform() for _ in range(5)] == [b.uniform() for _ in range(5)]

    def test_child_does_not_advance_parent(self):
        a, b = RngStream(7), RngStream(7)
        a.child("x").uniform()
        assert a.uniform() == b.uniform()

    def test_children_differ_by_label(self):
        r = RngStream(3)
        assert r.child("a").uniform() != r.child("b").uniform()

    def test_child_independent_of_parent_position(self):
        a, b = RngStream(5), RngStream(5)
        b.uniform()
        assert a.child("k").uniform() == b.child("k").uniform()

    @pytest.mark.parametrize("seed", [-1, 2**64])
    def test_seed_range(self, seed):
        with pytest.raises(ValueError):
            RngStream(seed)

    def test_uniform_moments(self):
        u = RngStream(11).uniforms(20_000)
        assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / len(u))
        assert np.all((u > 0) & (u < 1))

    def test_normal_moments(self):
        r = RngStream(12)
        x = np.array([r.normal() for _ in range(20_000)])
        assert abs(x.mean()) < 4 / np.sqrt(len(x))
        assert abs(x.var() - 1) < 0.05

    @given(st.integers(1, 50), st.integers(0, 2**63))
    @settings(max_examples=50, deadline=None)
    def test_integer_range(self, n, seed):
        r = RngStream(seed)
        assert all(0 <= r.integer(n) < n for _ in range(10))

    def test_generator_deterministic(self):
        a = RngStream(2).generator().gamma(2.0, size=3)
        b = RngStream(2).generator().gamma(2.0, size=3)
        assert np.array_equal(a, b)
