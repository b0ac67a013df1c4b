"""Experiment configuration: JSON file, env-var overrides, validation.

A config is everything a run depends on; two runs with equal configs and
seeds must produce byte-identical outputs. Environment variables prefixed
FEDLEDGER_ override scalar fields (e.g. FEDLEDGER_ROUNDS=10), which keeps
sweeps scriptable without editing files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CostParams:
    """Simulated-time constants: one-time network setup, per-commit
    consensus, per-transaction recording, per-epoch training compute."""

    init_cost: int = 35
    consensus_cost: int = 3
    tx_cost: int = 2
    epoch_cost: int = 26

    def __post_init__(self):
        for name in ("init_cost", "consensus_cost", "tx_cost", "epoch_cost"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "logistic"
    hidden: int = 0


@dataclass(frozen=True)
class DataConfig:
    """Where the training pool comes from.

    source "synthetic" draws seeded Gaussian blobs; "csv" reads label-first
    CSV files; "idx" reads an image/label file pair per split. train_total
    and test_total cap the pool after a seeded shuffle; feature_scale
    divides all features (e.g. 255 for byte-valued pixels).
    """

    source: str = "synthetic"
    n_features: int = 20
    n_classes: int = 10
    train_per_client: int = 200
    test_examples: int = 500
    train_path: str | None = None
    test_path: str | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_total: int | None = None
    test_total: int | None = None
    feature_scale: float | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "csv", "idx"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "csv" and not (self.train_path and self.test_path):
            raise ConfigError("csv source needs train_path and test_path")
        if self.source == "idx" and not (
            self.train_images and self.train_labels and self.test_images and self.test_labels
        ):
            raise ConfigError("idx source needs train/test image and label paths")


@dataclass(frozen=True)
class PartitionConfig:
    kind: str = "iid"
    unlearn_client: str | None = None
    sharded_class: int = 0

    def __post_init__(self):
        if self.kind not in ("iid", "class_sharded"):
            raise ConfigError(f"unknown partition kind {self.kind!r}")


@dataclass(frozen=True)
class DPConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ConfigError("noise_multiplier must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    n_clients: int = 5
    rounds: int = 20
    aggregation_interval: int = 1
    batch_size: int = 32
    lr: float = 0.1
    seed: int = 0
    token_ttl: int = 1_000_000
    quorum: float = 1.0
    unlearn_at: int | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    dp: DPConfig = field(default_factory=DPConfig)
    costs: CostParams = field(default_factory=CostParams)

    def __post_init__(self):
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.aggregation_interval < 1:
            raise ConfigError("aggregation_interval must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.token_ttl <= 0:
            raise ConfigError("token_ttl must be positive")
        if not 0.0 < self.quorum <= 1.0:
            raise ConfigError("quorum must be in (0, 1]")
        if self.unlearn_at is not None and not 1 <= self.unlearn_at < self.rounds:
            raise ConfigError("unlearn_at must satisfy 1 <= unlearn_at < rounds")
        if self.partition.kind == "class_sharded" and self.unlearn_client not in self.client_ids():
            raise ConfigError("class_sharded partition needs unlearn_client among the clients")

    def client_ids(self) -> list[str]:
        return [f"C{i}" for i in range(1, self.n_clients + 1)]

    @property
    def agent_id(self) -> str:
        return "A1"

    @property
    def unlearn_client(self) -> str:
        return self.partition.unlearn_client or "C1"

    @property
    def epochs(self) -> int:
        return self.rounds * self.aggregation_interval

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        def sub(key, klass):
            value = obj.pop(key, None)
            if value is None:
                return klass()
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be an object")
            return klass(**value)

        obj = dict(obj)
        try:
            parts = {
                "model": sub("model", ModelConfig),
                "data": sub("data", DataConfig),
                "partition": sub("partition", PartitionConfig),
                "dp": sub("dp", DPConfig),
                "costs": sub("costs", CostParams),
            }
            return cls(**obj, **parts)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(obj)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())


_ENV_FIELDS = {
    "FEDLEDGER_N_CLIENTS": ("n_clients", int),
    "FEDLEDGER_ROUNDS": ("rounds", int),
    "FEDLEDGER_AGGREGATION_INTERVAL": ("aggregation_interval", int),
    "FEDLEDGER_BATCH_SIZE": ("batch_size", int),
    "FEDLEDGER_LR": ("lr", float),
    "FEDLEDGER_SEED": ("seed", int),
    "FEDLEDGER_TOKEN_TTL": ("token_ttl", int),
    "FEDLEDGER_QUORUM": ("quorum", float),
    "FEDLEDGER_UNLEARN_AT": ("unlearn_at", int),
}


def apply_env_overrides(config: ExperimentConfig, environ: Mapping[str, str]) -> ExperimentConfig:
    """Override scalar fields from FEDLEDGER_* variables; unset or empty
    variables leave the config untouched."""
    updates = {}
    for var, (name, conv) in _ENV_FIELDS.items():
        raw = environ.get(var)
        if raw:
            try:
                updates[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{var}={raw!r}: {exc}") from exc
    return replace(config, **updates) if updates else config
