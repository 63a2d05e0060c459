"""Dataclass configs with strict dict parsing (unknown keys rejected)."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

__all__ = ["TrainConfig", "ConfigError", "from_dict"]


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


@dataclass
class TrainConfig:
    """All knobs of the training pipeline."""

    dim: int = 128                     # representation width d
    gamma: float = 0.5                 # reconstruction loss weight
    omega: float = 50.0                # signature term weight in the joint distance
    bank_capacity: int = 1024          # memory bank size U
    batch_size: int = 512              # B
    lr: float = 1e-3                   # eta
    beta_alpha: float = 2.0
    beta_beta: float = 2.0
    fanouts: list[int] = field(default_factory=lambda: [16, 16])
    epochs: int = 30
    seed: int = 0
    disable_gate: bool = False
    disable_syn: bool = False
    max_syn_per_batch: int | None = None   # defaults to batch_size
    d_cat: int = 16
    per_relation_qkv: bool = False
    loss_reduction: str = "mean"       # "mean" | "sum"
    bank_refresh: str = "batch"        # "batch" | "epoch"
    optimizer: str = "adam"            # "adam" | "sgd"
    eval_every: int = 0                # validation cadence in epochs; 0 = never
    eval_batch_size: int = 2048

    def validate(self) -> "TrainConfig":
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.omega < 0:
            raise ConfigError("omega must be >= 0")
        if self.bank_capacity < 2:
            raise ConfigError("bank_capacity must be >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.beta_alpha <= 0 or self.beta_beta <= 0:
            raise ConfigError("beta parameters must be > 0")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigError(f"unknown loss_reduction {self.loss_reduction!r}")
        if self.bank_refresh not in ("batch", "epoch"):
            raise ConfigError(f"unknown bank_refresh {self.bank_refresh!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.fanouts:
            raise ConfigError("fanouts must list one value per hop")
        return self

    @property
    def syn_cap(self) -> int:
        return self.batch_size if self.max_syn_per_batch is None else self.max_syn_per_batch


def from_dict(cls, doc: dict):
    """Build a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError(f"expected a JSON object for {cls.__name__}, got {type(doc).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    obj = cls(**doc)
    if hasattr(obj, "validate"):
        obj.validate()
    return obj
