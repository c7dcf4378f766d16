from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any


class DivergedLoss(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 400
    beta: float = 0.1
    clip_eps: float = 0.2
    ppo_epochs: int = 4
    seed: int = 0
    dim: int = 4096
    hidden: int = 64
    max_len: int = 16
    reward_lr: float = 0.05
    reward_epochs: int = 300
    reward_l2: float = 1e-4
    singleton_weight: float = 0.5
    holdout: float = 0.2
    ppo_lr: float = 3e-4
    ppo_iters: int = 20
    samples_per_context: int = 4

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("beta", "seed", "reward_l2", "holdout", "singleton_weight"):
                if v < 0:
                    raise ValueError(f"{f.name} must be nonnegative")
            elif v <= 0:
                raise ValueError(f"{f.name} must be positive")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | Path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))
