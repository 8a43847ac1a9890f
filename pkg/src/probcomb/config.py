"""Run configuration: strict JSON schema backed by frozen dataclasses.

Unknown keys and type mismatches are rejected with the JSON path of the
offending value, e.g. ``$.train.lr``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError

SCHEMES = ("multinomial", "systematic")


@dataclass(frozen=True)
class DataConfig:
    n_sequences: int = 30
    T: int = 200
    speed: float = 0.05
    noise_sd: float = 0.01
    persistence: float = 0.9


@dataclass(frozen=True)
class PriorConfig:
    alpha0: float = 1.0
    m0: float = 0.0
    kappa0: float = 1.0


@dataclass(frozen=True)
class ModelConfig:
    S: int = 4
    obs_sd: float = 0.01
    priors: PriorConfig = field(default_factory=PriorConfig)


@dataclass(frozen=True)
class TrainConfig:
    K: int = 128
    epochs: int = 20
    batch: int = 5
    lr: float = 0.05
    tau: float = 0.5
    resample_scheme: str = "multinomial"
    moves_per_step: int = 0


@dataclass(frozen=True)
class VbemConfig:
    max_iters: int = 500
    tol: float = 1e-6


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    vbem: VbemConfig = field(default_factory=VbemConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        cfg = dataclasses.replace(self, **changes)
        validate(cfg)
        return cfg

    @classmethod
    def from_dict(cls, obj) -> "RunConfig":
        cfg = _parse(cls, obj, "$")
        validate(cfg)
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("$", f"invalid JSON: {e}") from None
        return cls.from_dict(obj)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _parse(cls, obj, path):
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in obj:
        if key not in fields:
            raise ConfigError(f"{path}.{key}", "unknown key")
    kwargs = {}
    for name, f in fields.items():
        if name not in obj:
            continue
        sub = f"{path}.{name}"
        kwargs[name] = _coerce(f.type, obj[name], sub)
    return cls(**kwargs)


_NESTED = {"DataConfig": DataConfig, "PriorConfig": PriorConfig, "ModelConfig": ModelConfig,
           "TrainConfig": TrainConfig, "VbemConfig": VbemConfig, "OutputConfig": OutputConfig}


def _coerce(type_name, value, path):
    # annotations are strings under postponed evaluation
    if type_name in _NESTED:
        return _parse(_NESTED[type_name], value, path)
    if type_name == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        return value
    if type_name == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        if not math.isfinite(value):
            raise ConfigError(path, "expected a finite number")
        return float(value)
    if type_name == "str":
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    raise AssertionError(type_name)


def validate(cfg: RunConfig):
    """Range checks: counts >= 1, rates > 0, probabilities in [0, 1]."""
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("$.seed", "must be a 64-bit unsigned integer")
    checks = [
        ("data.n_sequences", cfg.data.n_sequences >= 1, "must be >= 1"),
        ("data.T", cfg.data.T >= 1, "must be >= 1"),
        ("data.speed", 0 < cfg.data.speed < 1, "must lie in (0, 1), below the box size"),
        ("data.noise_sd", cfg.data.noise_sd >= 0, "must be >= 0"),
        ("data.persistence", 0 <= cfg.data.persistence <= 1, "must lie in [0, 1]"),
        ("model.S", cfg.model.S >= 1, "must be >= 1"),
        ("model.obs_sd", cfg.model.obs_sd > 0, "must be > 0"),
        ("model.priors.alpha0", cfg.model.priors.alpha0 > 0, "must be > 0"),
        ("model.priors.kappa0", cfg.model.priors.kappa0 > 0, "must be > 0"),
        ("train.K", cfg.train.K >= 1, "must be >= 1"),
        ("train.epochs", cfg.train.epochs >= 1, "must be >= 1"),
        ("train.batch", cfg.train.batch >= 1, "must be >= 1"),
        ("train.lr", cfg.train.lr > 0, "must be > 0"),
        ("train.tau", 0 <= cfg.train.tau <= 1, "must lie in [0, 1]"),
        ("train.resample_scheme", cfg.train.resample_scheme in SCHEMES, f"must be one of {list(SCHEMES)}"),
        ("train.moves_per_step", cfg.train.moves_per_step >= 0, "must be >= 0"),
        ("vbem.max_iters", cfg.vbem.max_iters >= 1, "must be >= 1"),
        ("vbem.tol", cfg.vbem.tol > 0, "must be > 0"),
        ("output.directory", bool(cfg.output.directory), "must be non-empty"),
    ]
    for where, ok, msg in checks:
        if not ok:
            raise ConfigError(f"$.{where}", msg)
