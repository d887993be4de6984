"""Runtime configuration: retrieval weights, thresholds, and episode limits.

One YAML file overrides any subset of fields; every episode log and cluster
report embeds the resolved configuration for provenance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml


@dataclass
class MemoConfig:
    embedding_dim: int = 256
    lambda_act: float = 1.0      # weight on action-vector similarity
    lambda_obj: float = 1.0      # weight on object-vector similarity
    lambda_scene: float = 0.0    # weight on the optional scene-vector term
    top_k: int = 4
    theta_min: float = 0.35      # retrieval score threshold
    theta_cluster: float = 0.80  # clustering similarity threshold
    max_globals: int = 8         # global entries appended per retrieval
    use_scene_key: bool = False  # embed scene digests into entry keys
    max_feedback_per_attempt: int = 5
    max_attempts: int = 6
    repair_rounds: int = 2       # model-output repair attempts in generation
    heartbeat_timeout: float = 30.0  # console silence before autonomous resume

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MemoConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "MemoConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        return cls.from_dict(data)
