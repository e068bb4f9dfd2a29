"""Run configuration shared by the command-line entry points."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data.augment import AugmentConfig
from .engine import SearchConfig, TrainConfig
from .network import BackboneConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data_dir: str = "data"
    out_dir: str = "out"
    # backbone
    modalities: int = 4
    nodes: int = 3
    zoom: int = 2
    depth: int = 2
    label_channels: int = 3
    # search
    search_epochs: int = 60
    count_threshold: int = 20
    hybrid_fraction: float = 0.2
    hybrid_lr: float = 3e-3
    kernel_lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    search_patch: int = 32
    # retraining
    train_epochs: int = 100
    train_lr: float = 3e-3
    train_patch: int = 64
    train_case_ids: list | None = None
    genotype_file: str | None = None
    augment: dict = field(default_factory=lambda: AugmentConfig().to_dict())
    # preprocessing, loss, decoding
    xi: float = 100.0
    lam: float = 0.1
    dice_eps: float = 1e-6
    threshold: float = 0.5
    nested_eval: bool = False
    figures: bool = True
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        try:
            AugmentConfig(**self.augment)
            self.backbone()
            self.search()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def override(self, **updates) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in updates.items() if v is not None})
        return RunConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(self.modalities, self.nodes, self.zoom, self.depth, self.label_channels)

    def search(self) -> SearchConfig:
        return SearchConfig(
            epochs=self.search_epochs, count_threshold=self.count_threshold,
            hybrid_fraction=self.hybrid_fraction, hybrid_lr=self.hybrid_lr,
            kernel_lr=self.kernel_lr, betas=self.betas, adam_eps=self.adam_eps,
            patch=self.search_patch, dice_eps=self.dice_eps, seed=self.seed,
        )

    def train(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.train_epochs, lr=self.train_lr, betas=self.betas, adam_eps=self.adam_eps,
            patch=self.train_patch, dice_eps=self.dice_eps, seed=self.seed,
            augment=AugmentConfig(**self.augment),
        )
