from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional


@dataclass(frozen=True)
class ETConfig:
    n_trees: int = 100
    k_features: Optional[int] = None  # None -> ceil(sqrt(d))
    min_leaf: int = 1
    max_depth: Optional[int] = None
    bootstrap: bool = False


@dataclass(frozen=True)
class MLPConfig:
    hidden_units: int = 64
    activation: str = "relu"
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    weight_decay: float = 0.0
    validation_fraction: float = 0.0
    patience: int = 20


@dataclass(frozen=True)
class KNNConfig:
    k: int = 5
    metric: str = "euclidean"


@dataclass(frozen=True)
class CARTConfig:
    max_depth: Optional[int] = None
    min_leaf: int = 1


@dataclass(frozen=True)
class TrainConfig:
    et: ETConfig = field(default_factory=ETConfig)
    mlp: MLPConfig = field(default_factory=MLPConfig)
    knn: KNNConfig = field(default_factory=KNNConfig)
    cart: CARTConfig = field(default_factory=CARTConfig)
    seed: int = 42

    def to_dict(self) -> dict:
        return asdict(self)

    def for_kind(self, kind: str):
        return getattr(self, {"extra_trees": "et", "et": "et"}.get(kind, kind))
