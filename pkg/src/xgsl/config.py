"""Training hyperparameters and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


SIMILARITY_MODES = ("weighted-cosine", "cosine", "dot-product", "knn")
ENCODER_MODES = ("gcn", "mlp")
BASELINES = ("leave-one-out", "mean")


@dataclass
class TrainConfig:
    # blend weight on the input graph
    lam: float = 0.5
    alpha: float = 0.1
    rho: float = 0.1
    pivots: int = 1000
    heads: int = 4
    threshold: float = 4e-5
    samples_k: int = 3
    max_iters: int = 10
    tol: float = 1e-3
    episodes: int = 2
    epochs: int = 100
    target_epochs: int = 500
    patience: int = 100
    lr: float = 0.01
    gnn_lr: float | None = None
    weight_decay: float = 5e-4
    dropout: float = 0.5
    hidden: int = 32
    seed: int = 0
    encoder: str = "gcn"
    similarity: str = "weighted-cosine"
    knn_k: int = 10
    optimizer: str = "adam"
    baseline: str = "leave-one-out"
    reward_normalize: bool = True
    reinforce_into_embeddings: bool = False
    feature_norm: str = "auto"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.alpha < 0 or self.rho < 0:
            raise ConfigError("alpha and rho must be non-negative")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        if not 0.0 <= self.threshold < 1.0:
            raise ConfigError("threshold must lie in [0, 1)")
        if self.samples_k < 1:
            raise ConfigError("samples_k must be >= 1")
        if self.max_iters < 1 or self.pivots < 1 or self.hidden < 1:
            raise ConfigError("max_iters, pivots and hidden must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.similarity not in SIMILARITY_MODES:
            raise ConfigError(f"similarity must be one of {SIMILARITY_MODES}")
        if self.encoder not in ENCODER_MODES:
            raise ConfigError(f"encoder must be one of {ENCODER_MODES}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {BASELINES}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.feature_norm not in ("auto", "row", "none"):
            raise ConfigError("feature_norm must be 'auto', 'row' or 'none'")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def learns_structure(self) -> bool:
        return self.similarity == "weighted-cosine"


# config-file / CLI spelling -> TrainConfig attribute
FLAG_NAMES = {
    "lambda": "lam",
    "samples-k": "samples_k",
    "max-iters": "max_iters",
    "target-epochs": "target_epochs",
    "gnn-lr": "gnn_lr",
    "weight-decay": "weight_decay",
    "knn-k": "knn_k",
    "reward-normalize": "reward_normalize",
    "reinforce-into-embeddings": "reinforce_into_embeddings",
    "feature-norm": "feature_norm",
}


def attribute_for(key: str) -> str:
    key = key.strip()
    attr = FLAG_NAMES.get(key, key.replace("-", "_"))
    return attr


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Returns raw strings."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def coerce(attr: str, value: str):
    """Convert a raw string to the type of TrainConfig field ``attr``."""
    if attr not in _TRAIN_FIELDS:
        raise ConfigError(f"unknown config key {attr!r}")
    default = _TRAIN_FIELDS[attr].default
    if isinstance(default, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{attr}: expected a boolean, got {value!r}")
    if attr == "gnn_lr":
        return None if value.lower() in ("", "none") else float(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value
