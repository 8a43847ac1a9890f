"""HMM parameter container and the distribution bundle the step model consumes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..distributions import Categorical, NormalDiag
from ..errors import InvalidParams

HEADINGS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


@dataclass(frozen=True)
class HmmDists:
    """Per-state distributions carried through the fold (possibly parameter-bound)."""

    initial: Categorical
    rows: tuple
    emissions: tuple

    @property
    def n_states(self):
        return len(self.rows)


@dataclass(frozen=True, eq=False)
class HmmParams:
    pi0: np.ndarray
    A: np.ndarray
    means: np.ndarray
    obs_sd: float

    def __post_init__(self):
        pi0 = np.asarray(self.pi0, dtype=float)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        object.__setattr__(self, "pi0", pi0)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "means", means)
        s = len(pi0)
        if A.shape != (s, s) or means.shape[0] != s:
            raise InvalidParams("inconsistent state counts")
        for row in np.vstack([pi0[None, :], A]):
            if np.any(row < 0) or abs(row.sum() - 1.0) > 1e-12:
                raise InvalidParams("pi0 and rows of A must lie on the simplex")
        if not self.obs_sd > 0:
            raise InvalidParams("obs_sd must be positive")

    @property
    def n_states(self):
        return len(self.pi0)

    @cached_property
    def dists(self) -> HmmDists:
        return HmmDists(
            Categorical(self.pi0),
            tuple(Categorical(r) for r in self.A),
            tuple(NormalDiag(m, self.obs_sd) for m in self.means),
        )

    def to_json(self):
        return {"pi0": self.pi0.tolist(), "A": self.A.tolist(), "means": self.means.tolist(),
                "obs_sd": self.obs_sd}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["pi0"]), np.array(obj["A"]), np.array(obj["means"]), float(obj["obs_sd"]))


def renormalize(p):
    """Project rounding drift back onto the simplex."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    return p / p.sum(axis=-1, keepdims=True)
