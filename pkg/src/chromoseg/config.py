"""Run configuration: one nested key/value file merged with command-line
overrides; the defaults are the full training configuration.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import yaml


@dataclass
class RunConfig:
    dataset: str | None = None
    layout: str = "auto"
    images_key: str | None = None
    labels_key: str | None = None
    out: str = "runs/default"

    split_ratio: float = 0.8
    split_seed: int = 123

    filters: tuple[int, ...] = (64, 128, 256, 512, 1024)
    upsample: str = "bilinear"
    d_strides: tuple[int, ...] = (2, 2, 2, 2, 1)
    d_sigmoid: bool = True

    loss: str = "lovasz"
    lambda_seg: float = 10.0
    class_weights: str | tuple[float, ...] | None = None  # "auto" for weighted kinds
    gan: bool = True

    batch_size: int = 64
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    max_epochs: int = 400
    early_stop_window: int = 15
    dice_monitor_samples: int | None = None
    seed: int = 123

    def validate(self) -> "RunConfig":
        if self.dataset is None:
            raise ValueError("a dataset path is required")
        if not Path(self.dataset).exists():
            raise FileNotFoundError(f"dataset not found: {self.dataset}")
        weighted = self.loss in ("weighted_ce", "weighted_dice")
        if weighted and self.class_weights is None:
            # inverse-frequency weights are the documented default
            self.class_weights = "auto"
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        for name in ("filters", "d_strides"):
            value = getattr(cfg, name)
            if isinstance(value, list):
                setattr(cfg, name, tuple(value))
        if isinstance(cfg.class_weights, list):
            cfg.class_weights = tuple(cfg.class_weights)
        return cfg


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return RunConfig.from_dict(raw)


def dump_config(path: str | Path, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
