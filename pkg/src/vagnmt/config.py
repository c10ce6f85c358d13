"""Training configuration: defaults, presets, JSON round-trip, validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError

# Named bundles tuned for particular data conditions; applied before
# explicit config keys so anything can still be overridden.
PRESETS = {
    "french": {"learning_rate": 1e-3, "dropout_embedding": 0.2,
               "dropout_context": 0.4, "dropout_output": 0.4},
    "long-sentence": {"batch_size": 12},
}


@dataclass
class TrainConfig:
    # objective
    alpha: float = 0.99           # weight on translation loss in the joint sum
    lam: float = 0.5              # attention share in the decoder init blend
    margin: float = 0.1           # ranking-loss hinge margin
    # optimization
    learning_rate: float = 4e-4
    batch_size: int = 32
    clip_norm: float = 1.0
    dropout_embedding: float = 0.3
    dropout_context: float = 0.5
    dropout_output: float = 0.5
    patience: int = 10
    max_epochs: int = 100
    target_bleu: float | None = None  # optional early exit on validation BLEU
    valid_beam: int = 12
    seed: int = 0
    # ablations
    text_only: bool = False
    no_grounding_attention: bool = False
    no_attention_init: bool = False
    # architecture
    embed_dim: int = 256
    hidden_dim: int = 512
    shared_dim: int = 512
    att_dim: int = 512
    out_dim: int = 256
    feature_dim: int | None = None  # inferred from the feature file when unset
    bpe_merges: int = 500
    # data
    data_dir: str | None = None
    preset: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (0.0 <= self.alpha <= 1.0, f"alpha must be in [0, 1], got {self.alpha}"),
            (0.0 <= self.lam <= 1.0, f"lam must be in [0, 1], got {self.lam}"),
            (self.margin >= 0.0, f"margin must be >= 0, got {self.margin}"),
            (self.learning_rate >= 0.0,
             f"learning_rate must be >= 0, got {self.learning_rate}"),
            (self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            (self.clip_norm > 0.0, f"clip_norm must be > 0, got {self.clip_norm}"),
            (self.patience >= 1, f"patience must be >= 1, got {self.patience}"),
            (self.max_epochs >= 1, f"max_epochs must be >= 1, got {self.max_epochs}"),
            (self.valid_beam >= 1, f"valid_beam must be >= 1, got {self.valid_beam}"),
            (self.bpe_merges >= 0, f"bpe_merges must be >= 0, got {self.bpe_merges}"),
        ]
        for value, name in ((self.dropout_embedding, "dropout_embedding"),
                            (self.dropout_context, "dropout_context"),
                            (self.dropout_output, "dropout_output")):
            checks.append((0.0 <= value < 1.0,
                           f"{name} must be in [0, 1), got {value}"))
        for dim in ("embed_dim", "hidden_dim", "shared_dim", "att_dim", "out_dim"):
            checks.append((getattr(self, dim) >= 1, f"{dim} must be >= 1"))
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(raw)
        preset = merged.get("preset")
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(
                    f"unknown preset {preset!r}, have {sorted(PRESETS)}")
            for key, value in PRESETS[preset].items():
                merged.setdefault(key, value)
        return cls(**merged)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
