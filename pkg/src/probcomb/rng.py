"""Keyed, counter-based random streams.

A stream is identified by a 16-byte key. Draws hash ``(key, counter)`` with
BLAKE2b, so a stream's output depends only on its key and how many draws it
has served. Child streams are derived from the parent key and a label without
consuming any parent draws, which is what lets particle ``k`` at step ``t``
see the same numbers whatever order (or process) it is evaluated in.
"""

from __future__ import annotations

import hashlib
from statistics import NormalDist

import numpy as np

_UNIT = 2.0**-53
_STD_NORMAL = NormalDist()


def _blake(data: bytes, key: bytes, size: int) -> bytes:
    return hashlib.blake2b(data, key=key, digest_size=size).digest()


class RngStream:
    """A deterministic random stream addressed by a key.

    Parameters
    ----------
    seed : int
        Master seed, a 64-bit unsigned integer.
    """

    __slots__ = ("key", "_counter")

    def __init__(self, seed: int = 0, *, key: bytes | None = None):
        if key is None:
            if not 0 <= int(seed) < 2**64:
                raise ValueError("seed must be a 64-bit unsigned integer")
            key = _blake(int(seed).to_bytes(8, "little"), b"probcomb-root", 16)
        self.key = key
        self._counter = 0

    def child(self, label) -> "RngStream":
        """Independent substream named by ``label``; does not advance ``self``."""
        return RngStream(key=_blake(str(label).encode(), self.key, 16))

    def _word(self) -> int:
        c = self._counter
        self._counter = c + 1
        return int.from_bytes(_blake(c.to_bytes(8, "little"), self.key, 8), "little")

    def uniform(self) -> float:
        """A draw from the open interval (0, 1)."""
        return ((self._word() >> 11) + 0.5) * _UNIT

    def normal(self) -> float:
        return _STD_NORMAL.inv_cdf(self.uniform())

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)])

    def integer(self, n: int) -> int:
        """Uniform integer in ``range(n)``."""
        return min(int(self.uniform() * n), n - 1)

    def generator(self) -> np.random.Generator:
        """A numpy Generator seeded from the next 128 bits of this stream.

        Used for the draws without a cheap inverse-CDF form (gamma, Dirichlet).
        """
        return np.random.Generator(np.random.PCG64([self._word(), self._word()]))

    def __repr__(self):
        return f"RngStream(key={self.key.hex()[:12]}..., counter={self._counter})"
