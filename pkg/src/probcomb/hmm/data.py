"""Bouncing-ball trajectories and the displacement datasets built from them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidGeometry
from ..rng import RngStream
from .params import HEADINGS, HmmParams


@dataclass(frozen=True)
class BallSettings:
    speed: float = 0.05
    noise_sd: float = 0.01
    persistence: float = 0.9
    box: tuple = (0.0, 1.0)


@dataclass
class BallTrajectory:
    positions: np.ndarray      # (T + 1, 2)
    displacements: np.ndarray  # (T, 2)
    headings: np.ndarray       # (T,) heading index that generated each step
    speed: float
    noise_sd: float


def _reflect(x, lo, hi):
    """Fold ``x`` back into ``[lo, hi]``; returns the position and whether the velocity flips."""
    flips = 0
    while x < lo or x > hi:
        x = 2.0 * hi - x if x > hi else 2.0 * lo - x
        flips += 1
    return x, flips % 2 == 1


def simulate_ball(speed, noise_sd, T, box=(0.0, 1.0), rng=None, *, persistence=0.9,
                  start=None, heading=None) -> BallTrajectory:
    """Piecewise-constant noisy motion among four axis-aligned headings, reflecting at walls.

    Each step keeps the heading with probability ``persistence`` (otherwise a
    different heading is drawn uniformly), then moves by
    ``speed * heading + Normal(0, noise_sd^2)``. Crossing a wall folds the
    overshoot back (``x' = 2 b - x``) and reverses the heading along that axis.
    """
    lo, hi = map(float, box)
    if not hi > lo:
        raise InvalidGeometry("box upper bound must exceed lower bound")
    if not 0.0 < speed < hi - lo:
        raise InvalidGeometry("speed must be positive and below the box size")
    if noise_sd < 0 or not 0.0 <= persistence <= 1.0:
        raise InvalidGeometry("noise_sd must be >= 0 and persistence in [0, 1]")
    rng = rng or RngStream(0)
    if start is None:
        span = hi - lo
        start = (lo + span * (0.1 + 0.8 * rng.uniform()), lo + span * (0.1 + 0.8 * rng.uniform()))
    h = rng.integer(4) if heading is None else int(heading)
    pos = np.empty((T + 1, 2))
    pos[0] = start
    if np.any(pos[0] < lo) or np.any(pos[0] > hi):
        raise InvalidGeometry("start lies outside the box")
    heads = np.empty(T, dtype=int)
    for t in range(T):
        if t > 0 and persistence < 1.0 and rng.uniform() >= persistence:
            h = (h + 1 + rng.integer(3)) % 4
        heads[t] = h
        vel = speed * HEADINGS[h]
        new = pos[t].copy()
        flip = [False, False]
        for d in range(2):
            step = vel[d] + (noise_sd * rng.normal() if noise_sd > 0 else 0.0)
            new[d], flip[d] = _reflect(pos[t, d] + step, lo, hi)
        # reflection only reverses the heading along its own axis
        if flip[0] and HEADINGS[h][0] != 0.0 or flip[1] and HEADINGS[h][1] != 0.0:
            h = (h + 2) % 4
        pos[t + 1] = new
    return BallTrajectory(pos, pos[1:] - pos[:-1], heads, speed, noise_sd)


def true_params(settings: BallSettings, obs_sd: float) -> HmmParams:
    """The switching process as an HMM: uniform start, persistence on the diagonal."""
    p = settings.persistence
    A = np.full((4, 4), (1.0 - p) / 3.0)
    np.fill_diagonal(A, p)
    A /= A.sum(axis=1, keepdims=True)
    return HmmParams(np.full(4, 0.25), A, settings.speed * HEADINGS, obs_sd)


@dataclass
class Dataset:
    sequences: list            # (T, 2) displacement arrays
    states: list               # (T,) ground-truth heading indices, evaluation only
    settings: BallSettings = field(default_factory=BallSettings)

    def __len__(self):
        return len(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]


def generate_dataset(n_sequences, T, settings: BallSettings | None = None, seed=0) -> Dataset:
    if n_sequences < 1:
        raise ValueError("n_sequences must be at least 1")
    settings = settings or BallSettings()
    root = RngStream(seed)
    seqs, states = [], []
    for n in range(n_sequences):
        tr = simulate_ball(settings.speed, settings.noise_sd, T, settings.box, root.child(f"seq:{n}"),
                           persistence=settings.persistence)
        seqs.append(tr.displacements)
        states.append(tr.headings)
    return Dataset(seqs, states, settings)


CSV_HEADER = ["seq", "t", "dx", "dy", "true_state"]


def dataset_to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for n, (seq, st) in enumerate(zip(ds.sequences, ds.states)):
        for t in range(len(seq)):
            w.writerow([n, t, repr(float(seq[t, 0])), repr(float(seq[t, 1])), int(st[t])])
    return buf.getvalue()


def dataset_from_csv(text: str, settings: BallSettings | None = None) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"dataset header must be {','.join(CSV_HEADER)}")
    by_seq: dict[int, list] = {}
    for r in rows[1:]:
        by_seq.setdefault(int(r[0]), []).append((int(r[1]), float(r[2]), float(r[3]), int(r[4])))
    seqs, states = [], []
    for n in sorted(by_seq):
        recs = sorted(by_seq[n])
        seqs.append(np.array([[dx, dy] for _, dx, dy, _ in recs]).reshape(-1, 2))
        states.append(np.array([s for *_, s in recs], dtype=int))
    return Dataset(seqs, states, settings or BallSettings())
