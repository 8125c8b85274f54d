"""Experiment configuration, presets and the run fingerprint."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .training import TrainConfig

DATA_DIR_ENV = "ENCDEC_AD_DATA_DIR"
PRESETS = ("power", "space_shuttle", "ecg", "synthetic")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    series: list = field(default_factory=list)  # data files, relative to data_dir
    labels: str | None = None  # interval file
    columns: list | None = None
    synthetic: dict | None = None  # sine_series kwargs; replaces `series`
    data_dir: str | None = None
    downsample: int = 1
    downsample_method: str = "mean"
    L: int = 30
    step: int | None = None  # defaults to L (non-overlapping)
    c: list = field(default_factory=lambda: [32])
    beta: float = 0.1
    threshold_mode: str = "supervised"
    split_ratios: list = field(default_factory=lambda: [0.5, 0.2, 0.15, 0.15])
    anomalous_split_ratios: list = field(default_factory=lambda: [0.5, 0.5])
    normalize: bool = True
    pca: bool = False
    decode_mode: str = "autoregressive"
    seed: int = 0
    train: dict = field(default_factory=dict)
    predictable: bool | None = None
    periodicity: str | None = None
    n_plots: int = 4
    out: str | None = None

    def __post_init__(self):
        if isinstance(self.c, int):
            self.c = [self.c]
        if self.step is None:
            self.step = self.L

    def validate(self) -> ExperimentConfig:
        if not self.series and not self.synthetic:
            raise ConfigError("config needs `series` files or a `synthetic` block")
        if self.downsample < 1:
            raise ConfigError(f"downsample must be >= 1, got {self.downsample}")
        if self.downsample_method not in ("mean", "decimate"):
            raise ConfigError(f"downsample_method must be 'mean' or 'decimate', got {self.downsample_method!r}")
        if self.L < 1 or self.step < 1:
            raise ConfigError("L and step must be >= 1")
        if not self.c or any((not isinstance(c, int)) or c < 1 for c in self.c):
            raise ConfigError(f"every c must be a positive integer, got {self.c}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.threshold_mode not in ("supervised", "unsupervised"):
            raise ConfigError(f"threshold_mode must be supervised or unsupervised, got {self.threshold_mode!r}")
        if self.decode_mode not in ("autoregressive", "teacher_forced"):
            raise ConfigError(f"decode_mode must be autoregressive or teacher_forced, got {self.decode_mode!r}")
        if len(self.split_ratios) != 4 or abs(sum(self.split_ratios) - 1) > 1e-9 or min(self.split_ratios) < 0:
            raise ConfigError(f"split_ratios must be 4 non-negative numbers summing to 1, got {self.split_ratios}")
        if len(self.anomalous_split_ratios) != 2 or abs(sum(self.anomalous_split_ratios) - 1) > 1e-9 or min(self.anomalous_split_ratios) < 0:
            raise ConfigError(f"anomalous_split_ratios must be 2 non-negative numbers summing to 1, got {self.anomalous_split_ratios}")
        if self.split_ratios[0] <= 0 or self.split_ratios[1] <= 0:
            raise ConfigError("sN and vN1 ratios must be positive")
        if self.threshold_mode == "supervised":
            if self.split_ratios[2] <= 0 or self.anomalous_split_ratios[0] <= 0:
                raise ConfigError("supervised thresholding needs positive vN2 and vA ratios")
            if self.series and not self.labels:
                raise ConfigError("supervised thresholding needs a `labels` interval file")
        try:
            self.train_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train settings: {exc}") from exc
        return self

    def train_config(self) -> TrainConfig:
        unknown = set(self.train) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise ConfigError(f"unknown train settings {sorted(unknown)}")
        return TrainConfig(**{"seed": self.seed, **self.train})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"format_version", "kind", "config_hash"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    def config_hash(self) -> str:
        """sha256 over the canonical JSON of every setting except the output directory."""
        d = self.to_dict()
        d.pop("out", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if p.is_absolute():
            return p
        root = self.data_dir or os.environ.get(DATA_DIR_ENV) or "."
        return Path(root) / p


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("encdec_ad.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return ExperimentConfig.from_dict(json.loads(text))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(d)
