"""Experiment configuration shared by the command-line entry points."""

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .attack import FgsmConfig
from .optim import TrainConfig
from .tensor import Rng

# child-stream indices derived from the experiment seed
DATA_STREAM, SPLIT_STREAM, INIT_STREAM, TRAIN_STREAM = range(4)


@dataclass
class ExperimentConfig:
    data_dir: Optional[str] = None  # None -> synthetic data
    n_per_class: int = 500
    image_size: int = 32
    conv_channels: list = field(default_factory=lambda: [16, 32])
    freeze: list = field(default_factory=list)
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-4
    train_fraction: float = 0.7
    rotation_range: float = 15.0
    shuffle: bool = True
    epsilon: float = 0.1
    clip_min: float = 0.0
    clip_max: float = 1.0
    mix_alpha: float = 0.5
    n_samples: int = 4
    precision: str = "float32"
    seed: int = 7
    out: str = "runs/default"

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.n_per_class < 1:
            raise ValueError(f"n_per_class must be >= 1, got {self.n_per_class}")
        if self.image_size < 8:
            raise ValueError(f"image_size must be >= 8, got {self.image_size}")
        if not 0.0 <= self.mix_alpha <= 1.0:
            raise ValueError(f"mix_alpha must lie in [0, 1], got {self.mix_alpha}")
        if self.n_samples < 0:
            raise ValueError(f"n_samples must be >= 0, got {self.n_samples}")
        self.conv_channels = [int(c) for c in self.conv_channels]
        self.freeze = [int(i) for i in self.freeze]
        # fail early on bad training / attack settings
        self.train_config()
        self.fgsm_config()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def rng(self, stream: int) -> Rng:
        return Rng(self.seed).spawn(stream)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.seed, self.shuffle, self.rotation_range)

    def fgsm_config(self) -> FgsmConfig:
        return FgsmConfig(self.epsilon, self.clip_min, self.clip_max)
