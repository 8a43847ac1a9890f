"""Addressed stochastic traces.

Addresses are rendered as ``/``-joined segments (``"right/step:3/z"``) and the
rendered string is used as the record key, so two addresses are equal iff
their strings are. Traces are insertion-ordered and treated as immutable once
the evaluation that built them returns.
"""

from __future__ import annotations

import enum
import math
from typing import Any, NamedTuple

from .distributions import Distribution, Factor
from .errors import AddressCollision, DuplicateAddress, InvalidAddress, MissingLatent

NEG_INF = -math.inf


class Address:
    """Validated hierarchical address."""

    __slots__ = ("segments",)

    def __init__(self, *segments: str):
        if not segments:
            raise InvalidAddress("address needs at least one segment")
        for s in segments:
            if not isinstance(s, str) or not s or "/" in s:
                raise InvalidAddress(f"bad address segment {s!r}")
        self.segments = tuple(segments)

    @classmethod
    def parse(cls, text: str) -> "Address":
        return cls(*text.split("/"))

    def __str__(self):
        return "/".join(self.segments)

    def __repr__(self):
        return f"Address({str(self)!r})"

    def __eq__(self, other):
        return isinstance(other, Address) and self.segments == other.segments

    def __hash__(self):
        return hash(str(self))


def check_address(addr) -> str:
    """Return the rendered form of ``addr``, validating it."""
    if isinstance(addr, Address):
        return str(addr)
    if not isinstance(addr, str) or not addr or addr[0] == "/" or addr[-1] == "/" or "//" in addr:
        raise InvalidAddress(f"bad address {addr!r}")
    return addr


class Role(str, enum.Enum):
    SAMPLED = "sampled"
    OBSERVED = "observed"
    REPLAYED = "replayed"


class RVRecord(NamedTuple):
    address: str
    dist: Distribution
    value: Any
    log_prob: float
    role: Role
    value_bindings: tuple = ()

    @property
    def latent(self) -> bool:
        return self.role is not Role.OBSERVED

    def to_json(self):
        value = self.value
        if isinstance(value, tuple):
            value = list(value)
        return {
            "address": self.address,
            "dist": self.dist.to_json(),
            "value": value,
            "log_prob": _json_float(self.log_prob),
            "role": self.role.value,
        }


def _json_float(x):
    # JSON has no infinities; -inf log-densities are written as null
    return None if math.isinf(x) else x


class Trace:
    """Insertion-ordered map from rendered address to :class:`RVRecord`."""

    __slots__ = ("_records",)

    def __init__(self, records=()):
        self._records: dict[str, RVRecord] = {}
        for rec in records:
            if rec.address in self._records:
                raise DuplicateAddress(rec.address)
            self._records[rec.address] = rec

    @classmethod
    def _wrap(cls, mapping):
        t = cls.__new__(cls)
        t._records = mapping
        return t

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records.values())

    def __contains__(self, address):
        return str(address) in self._records

    def __getitem__(self, address) -> RVRecord:
        return self._records[str(address)]

    def get(self, address, default=None):
        return self._records.get(str(address), default)

    def addresses(self):
        return list(self._records)

    def value(self, address):
        return self._records[str(address)].value

    def __eq__(self, other):
        if not isinstance(other, Trace) or len(self) != len(other):
            return False
        return all(a[:5] == b[:5] for a, b in zip(self._records.values(), other._records.values()))

    def __repr__(self):
        return f"Trace({len(self)} records)"

    def log_joint(self) -> float:
        return log_joint(self)

    def latent_log_prob(self) -> float:
        return sum(r.log_prob for r in self._records.values() if r.role is not Role.OBSERVED)

    def observed_log_prob(self) -> float:
        return sum(r.log_prob for r in self._records.values() if r.role is Role.OBSERVED)

    def replace_values(self, values: dict) -> "Trace":
        """Copy with some record values swapped (log-probs left stale; rescore before use)."""
        recs = dict(self._records)
        for addr, v in values.items():
            addr = str(addr)
            recs[addr] = recs[addr]._replace(value=v)
        return Trace._wrap(recs)

    def to_json(self):
        return [r.to_json() for r in self._records.values()]


class WeightedSample(NamedTuple):
    """An output value with its trace and log proper weight.

    ``proposal`` holds the proposal-side trace when the sample came out of an
    importance step; the proposal-gradient estimator reads it.
    """

    output: Any
    trace: Trace
    log_weight: float
    proposal: Trace | None = None


def sample_at(trace: Trace, addr, dist: Distribution, ctx):
    """Record a latent site and return its value.

    Replays the conditioning value when ``ctx`` has one for ``addr``; otherwise
    draws from ``dist`` (an error in score-only mode).
    """
    addr = check_address(addr)
    recs = trace._records
    if addr in recs:
        raise DuplicateAddress(addr)
    cond = ctx.lookup(addr)
    if cond is not None:
        value = cond.value
        recs[addr] = RVRecord(addr, dist, value, dist.log_prob(value), Role.REPLAYED)
    else:
        if ctx.score_only:
            raise MissingLatent(ctx.scope + addr)
        value = dist.sample(ctx.rng)
        recs[addr] = RVRecord(addr, dist, value, dist.log_prob(value), Role.SAMPLED)
    return value


def observe_at(trace: Trace, addr, dist: Distribution, value, value_bindings=()) -> float:
    """Record an observed site; returns its log-density (its log-weight contribution)."""
    addr = check_address(addr)
    recs = trace._records
    if addr in recs:
        raise DuplicateAddress(addr)
    lp = dist.log_prob(value)
    recs[addr] = RVRecord(addr, dist, value, lp, Role.OBSERVED, tuple(value_bindings))
    return lp


def factor_at(trace: Trace, addr, log_weight: float) -> float:
    """Record an arbitrary log-weight factor as an observed site."""
    f = Factor(log_weight)
    return observe_at(trace, addr, f, f.log_weight)


def log_joint(trace: Trace) -> float:
    return sum(r.log_prob for r in trace._records.values())


def merge(a: Trace, b: Trace) -> Trace:
    """Concatenate two traces with disjoint addresses, ``a`` first."""
    ra, rb = a._records, b._records
    if len(ra) < len(rb):
        for k in ra:
            if k in rb:
                raise AddressCollision(k)
    else:
        for k in rb:
            if k in ra:
                raise AddressCollision(k)
    out = dict(ra)
    out.update(rb)
    return Trace._wrap(out)


def merge_all(traces) -> Trace:
    out: dict[str, RVRecord] = {}
    for t in traces:
        for k, r in t._records.items():
            if k in out:
                raise AddressCollision(k)
            out[k] = r
    return Trace._wrap(out)


def prefix(t: Trace, segment: str) -> Trace:
    """Push ``segment`` onto the head of every address."""
    if not isinstance(segment, str) or not segment or "/" in segment:
        raise InvalidAddress(f"bad prefix segment {segment!r}")
    return push_path(t, segment)


def push_path(t: Trace, path: str) -> Trace:
    """Like :func:`prefix` for an already validated multi-segment ``path``."""
    head = path + "/"
    return Trace._wrap({head + k: r._replace(address=head + k) for k, r in t._records.items()})


def restrict(t: Trace, segment: str) -> Trace:
    """Records under ``segment`` with that head stripped (inverse of :func:`prefix`)."""
    head = segment + "/"
    n = len(head)
    return Trace._wrap({k[n:]: r._replace(address=k[n:]) for k, r in t._records.items() if k.startswith(head)})
