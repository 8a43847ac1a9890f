"""Distribution families: sampling, log-density and analytic score gradients.

Parameters are held in their natural (constrained) space. Gradients are taken
with respect to an unconstrained vector:

* ``NormalDiag``  -> ``(mean..., log scale...)``
* ``Categorical`` -> logits with the last logit pinned to 0 (length n - 1)
* ``Dirichlet``   -> ``log alpha``

A descriptor may carry ``bindings`` that tie components of its unconstrained
vector to entries of a :class:`~probcomb.estimators.ParameterStore`; the
gradient estimators use them to route per-site scores.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

from .errors import InvalidParams, InvalidValue, OffSupport

NEG_INF = -math.inf
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class Binding:
    """Route gradient components to a store entry.

    Accumulation is ``grad[entry][store_index] += coef * g[local_index]`` where
    ``g`` is a site's gradient with respect to its unconstrained parameters
    (or, for value bindings, its unconstrained value).
    """

    entry: str
    store_index: np.ndarray
    local_index: np.ndarray
    coef: np.ndarray | float = 1.0

    @classmethod
    def slice(cls, entry, start, length, local_start=0):
        return cls(entry, np.arange(start, start + length), np.arange(local_start, local_start + length))


def _is_nan(x) -> bool:
    return x != x


class Distribution:
    """Common surface. Subclasses set ``name`` and implement the methods."""

    __slots__ = ()
    name = "distribution"
    bindings = ()

    def sample(self, rng):
        raise NotImplementedError

    def log_prob(self, value) -> float:
        raise NotImplementedError

    def score_grad(self, value) -> np.ndarray:
        raise NotImplementedError

    def value_grad(self, value) -> np.ndarray:
        raise TypeError(f"{self.name} has no value gradient")

    def unconstrained(self) -> np.ndarray:
        raise NotImplementedError

    def with_unconstrained(self, vec):
        raise NotImplementedError

    def params_json(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> dict:
        return {"name": self.name, "params": self.params_json()}

    def __eq__(self, other):
        return type(self) is type(other) and self.params_json() == other.params_json()

    def __hash__(self):
        return hash((self.name, repr(self.params_json())))

    def __repr__(self):
        return f"{type(self).__name__}({self.params_json()})"


class NormalDiag(Distribution):
    """Normal with diagonal covariance.

    Scalar ``mean`` and ``scale`` give a univariate normal whose values are
    floats; otherwise values are tuples of floats.
    """

    __slots__ = ("mean", "scale", "scalar", "bindings", "_log_norm")
    name = "normal_diag"

    def __init__(self, mean, scale, bindings=()):
        scalar = np.ndim(mean) == 0 and np.ndim(scale) == 0
        if scalar:
            mean, scale = (float(mean),), (float(scale),)
        else:
            mean = tuple(float(m) for m in np.ravel(mean))
            scale = np.ravel(scale).astype(float)
            if scale.size == 1:
                scale = np.full(len(mean), scale[0])
            scale = tuple(float(s) for s in scale)
            if len(scale) != len(mean):
                raise InvalidParams("mean and scale lengths differ")
        for s in scale:
            if not (s > 0.0) or math.isinf(s):
                raise InvalidParams(f"scale must be positive and finite, got {s}")
        for m in mean:
            if not math.isfinite(m):
                raise InvalidParams(f"mean must be finite, got {m}")
        self.mean = mean
        self.scale = scale
        self.scalar = scalar
        self.bindings = tuple(bindings)
        self._log_norm = sum(math.log(s) for s in scale) + len(scale) * HALF_LOG_2PI

    @property
    def dim(self):
        return len(self.mean)

    def _coords(self, value):
        if self.scalar:
            if np.ndim(value) != 0:
                raise InvalidValue("scalar normal expects a scalar value")
            return (float(value),)
        if type(value) is tuple and len(value) == len(self.mean):
            return value
        v = tuple(float(x) for x in np.ravel(value))
        if len(v) != len(self.mean):
            raise InvalidValue(f"expected {len(self.mean)} components, got {len(v)}")
        return v

    def sample(self, rng):
        if self.scalar:
            return self.mean[0] + self.scale[0] * rng.normal()
        return tuple(m + s * rng.normal() for m, s in zip(self.mean, self.scale))

    def log_prob(self, value):
        v = self._coords(value)
        acc = 0.0
        for x, m, s in zip(v, self.mean, self.scale):
            if _is_nan(x):
                raise InvalidValue("NaN value")
            if math.isinf(x):
                return NEG_INF
            z = (x - m) / s
            acc += z * z
        return -0.5 * acc - self._log_norm

    def score_grad(self, value):
        v = np.array(self._coords(value))
        m, s = np.array(self.mean), np.array(self.scale)
        if not np.all(np.isfinite(v)):
            raise OffSupport("non-finite value")
        r = (v - m) / s
        return np.concatenate([r / s, r * r - 1.0])

    def value_grad(self, value):
        v = np.array(self._coords(value))
        return -(v - np.array(self.mean)) / np.array(self.scale) ** 2

    def unconstrained(self):
        return np.concatenate([self.mean, np.log(self.scale)])

    def with_unconstrained(self, vec):
        vec = np.asarray(vec, dtype=float)
        d = self.dim
        if self.scalar:
            return NormalDiag(vec[0], math.exp(vec[1]), self.bindings)
        return NormalDiag(vec[:d], np.exp(vec[d:]), self.bindings)

    def params_json(self):
        if self.scalar:
            return {"mean": self.mean[0], "scale": self.scale[0]}
        return {"mean": list(self.mean), "scale": list(self.scale)}


def Normal(loc, scale, bindings=()):
    """Univariate normal; shorthand for a scalar :class:`NormalDiag`."""
    return NormalDiag(float(loc), float(scale), bindings)


def _softmax(logits):
    mx = max(logits)
    if mx == NEG_INF:
        raise InvalidParams("all logits are -inf")
    ex = [math.exp(x - mx) for x in logits]
    tot = sum(ex)
    return [e / tot for e in ex]


class Categorical(Distribution):
    """Distribution over indices ``0..n-1``."""

    __slots__ = ("probs", "bindings", "_cum", "_last_pos")
    name = "categorical"

    def __init__(self, probs, bindings=(), *, validate=True):
        probs = tuple(map(float, probs))
        if validate:
            if len(probs) == 0:
                raise InvalidParams("empty probability vector")
            total = math.fsum(probs)
            # NaN fails both comparisons; an infinite entry makes the sum non-finite
            if not (min(probs) >= 0.0) or not (abs(total - 1.0) <= 1e-12):
                raise InvalidParams(f"probabilities must be non-negative and sum to 1, got {probs}")
        self.probs = probs
        self.bindings = tuple(bindings)
        self._cum = None
        self._last_pos = None

    @classmethod
    def from_logits(cls, logits, bindings=()):
        """Softmax of a full logit vector."""
        return cls(_softmax([float(x) for x in logits]), bindings, validate=False)

    @property
    def n(self):
        return len(self.probs)

    def sample(self, rng):
        if self._cum is None:
            acc, cum = 0.0, []
            for p in self.probs:
                acc += p
                cum.append(acc)
            self._cum = [c / acc for c in cum]
            self._last_pos = max(i for i, p in enumerate(self.probs) if p > 0.0)
        k = bisect_right(self._cum, rng.uniform())
        # guards against the final cumulative sum rounding below 1
        return k if k <= self._last_pos else self._last_pos

    def _index(self, value):
        if type(value) is int or isinstance(value, np.integer):
            return int(value)
        if np.ndim(value) != 0:
            raise InvalidValue("categorical value must be a scalar index")
        x = float(value)
        if _is_nan(x):
            raise InvalidValue("NaN value")
        if x != math.floor(x) or math.isinf(x):
            return None
        return int(x)

    def log_prob(self, value):
        k = self._index(value)
        if k is None or k < 0 or k >= len(self.probs):
            return NEG_INF
        p = self.probs[k]
        return math.log(p) if p > 0.0 else NEG_INF

    def score_grad(self, value):
        if self.log_prob(value) == NEG_INF:
            raise OffSupport(f"index {value!r} has zero probability")
        k = self._index(value)
        g = -np.array(self.probs[:-1])
        if k < len(self.probs) - 1:
            g[k] += 1.0
        return g

    def unconstrained(self):
        p = np.array(self.probs)
        with np.errstate(divide="ignore"):
            return np.log(p[:-1]) - np.log(p[-1])

    def with_unconstrained(self, vec):
        return Categorical.from_logits(list(np.asarray(vec, dtype=float)) + [0.0], self.bindings)

    def params_json(self):
        return {"probs": list(self.probs)}


class Dirichlet(Distribution):
    """Dirichlet over the probability simplex; values are tuples of floats."""

    __slots__ = ("alpha", "bindings", "_log_norm")
    name = "dirichlet"

    def __init__(self, alpha, bindings=()):
        alpha = tuple(float(a) for a in np.ravel(alpha))
        if len(alpha) < 2:
            raise InvalidParams("Dirichlet needs at least 2 components")
        if any(not (a > 0.0) or math.isinf(a) for a in alpha):
            raise InvalidParams("concentrations must be positive and finite")
        self.alpha = alpha
        self.bindings = tuple(bindings)
        self._log_norm = math.lgamma(sum(alpha)) - sum(math.lgamma(a) for a in alpha)

    def sample(self, rng):
        x = rng.generator().dirichlet(self.alpha)
        return tuple(float(v) for v in x)

    def _coords(self, value):
        v = tuple(float(x) for x in np.ravel(value))
        if len(v) != len(self.alpha):
            raise InvalidValue(f"expected {len(self.alpha)} components, got {len(v)}")
        if any(_is_nan(x) for x in v):
            raise InvalidValue("NaN value")
        return v

    def _on_simplex(self, v):
        return all(x > 0.0 for x in v) and abs(math.fsum(v) - 1.0) <= 1e-9

    def log_prob(self, value):
        v = self._coords(value)
        if not self._on_simplex(v):
            return NEG_INF
        return self._log_norm + sum((a - 1.0) * math.log(x) for a, x in zip(self.alpha, v))

    def score_grad(self, value):
        v = self._coords(value)
        if not self._on_simplex(v):
            raise OffSupport("value is off the simplex")
        a = np.array(self.alpha)
        return a * (digamma(a.sum()) - digamma(a) + np.log(v))

    def value_grad(self, value):
        """Gradient with respect to the value's free logits (last pinned to 0)."""
        v = np.array(self._coords(value))
        am1 = np.array(self.alpha) - 1.0
        return am1[:-1] - v[:-1] * am1.sum()

    def unconstrained(self):
        return np.log(self.alpha)

    def with_unconstrained(self, vec):
        return Dirichlet(np.exp(np.asarray(vec, dtype=float)), self.bindings)

    def params_json(self):
        return {"alpha": list(self.alpha)}


class Factor(Distribution):
    """A fixed log-weight contribution recorded as an observed site."""

    __slots__ = ("log_weight",)
    name = "factor"

    def __init__(self, log_weight):
        lw = float(log_weight)
        if _is_nan(lw) or lw == math.inf:
            raise InvalidParams("factor log-weight must be finite or -inf")
        self.log_weight = lw

    def sample(self, rng):
        raise TypeError("a factor cannot be sampled")

    def log_prob(self, value):
        return self.log_weight

    def score_grad(self, value):
        return np.zeros(0)

    def unconstrained(self):
        return np.zeros(0)

    def params_json(self):
        return {"log_weight": self.log_weight}


FAMILIES = {cls.name: cls for cls in (NormalDiag, Categorical, Dirichlet, Factor)}


def from_json(obj) -> Distribution:
    """Inverse of :meth:`Distribution.to_json` (bindings are not serialized)."""
    try:
        cls = FAMILIES[obj["name"]]
    except KeyError:
        raise InvalidParams(f"unknown distribution {obj.get('name')!r}") from None
    return cls(**obj["params"])
