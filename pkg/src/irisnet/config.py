"""Run configuration and its JSON file form."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from irisnet.augment import AugmentRanges
from irisnet.model import ArchConfig, ConfigError
from irisnet.phantom import PhantomParams

LOSS_MODES = ("dice+bce", "dice", "bce")


@dataclass(frozen=True)
class TrainConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    epochs: int = 50
    batch_size: int = 20
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps_adam: float = 1e-8
    loss: str = "dice+bce"
    dice_weight: float = 1.0
    bce_weight: float = 1.0
    augment: bool = True
    augmentation: AugmentRanges = field(default_factory=AugmentRanges)
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    threshold: float = 0.1
    mm_per_pixel: float = 0.15
    phantom: PhantomParams = field(default_factory=PhantomParams)
    seed: int = 0
    # Wall-clock seconds make history files non-reproducible, so they are opt-in.
    log_wall_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(r) for r in self.split))
        self.validate()

    def validate(self) -> None:
        self.arch.validate()
        self.augmentation.validate()
        self.phantom.validate()
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps_adam <= 0:
            raise ConfigError("eps_adam must be positive")
        if self.loss not in LOSS_MODES:
            raise ConfigError(f"loss must be one of {LOSS_MODES}, got {self.loss!r}")
        if len(self.split) != 3 or any(r <= 0 for r in self.split) or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError(f"split must be three positive ratios summing to 1, got {self.split}")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.mm_per_pixel <= 0:
            raise ConfigError("mm_per_pixel must be positive")
        if self.phantom.height != self.arch.input_size or self.phantom.width != self.arch.input_size:
            raise ConfigError(
                f"phantom size {self.phantom.height}x{self.phantom.width} must equal arch.input_size {self.arch.input_size}"
            )

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["arch"] = self.arch.to_dict()
        d["augmentation"] = self.augmentation.to_dict()
        d["phantom"] = self.phantom.to_dict()
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(unknown)}")
        d = dict(d)
        if "arch" in d:
            d["arch"] = ArchConfig.from_dict(d["arch"])
        if "augmentation" in d:
            d["augmentation"] = AugmentRanges(**d["augmentation"])
        if "phantom" in d:
            d["phantom"] = PhantomParams.from_dict(d["phantom"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def sized_config(input_size: int, **overrides) -> TrainConfig:
    """Default config with architecture and phantoms sized to ``input_size``."""
    arch = overrides.pop("arch", None) or ArchConfig(input_size=input_size)
    phantom = overrides.pop("phantom", None) or PhantomParams(height=input_size, width=input_size)
    return TrainConfig(arch=arch, phantom=phantom, **overrides)
