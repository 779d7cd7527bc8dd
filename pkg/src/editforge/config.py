"""Run configuration: one YAML file drives every subcommand.

Field paths in error messages follow the YAML structure (e.g.
``t2i.quotas.StoryType``) so invalid configs are quick to fix. The config
hash is recorded into provenance so any artifact can name the exact
configuration that produced it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .editmath import DEFAULT_BINARIZE_FACTOR, DEFAULT_IMAGE_GUIDANCE, DEFAULT_TEXT_GUIDANCE
from .schema import InstructionCategory
from .seeding import stable_digest


class ConfigError(ValueError):
    """Invalid configuration; message carries the offending field path."""


@dataclass
class EditMathConfig:
    binarize_factor: float = DEFAULT_BINARIZE_FACTOR
    s_img: float = DEFAULT_IMAGE_GUIDANCE
    s_txt: float = DEFAULT_TEXT_GUIDANCE
    dilation_px: int = 0
    schedule_steps: int = 8


@dataclass
class T2IBranchConfig:
    quotas: dict[str, int] = field(default_factory=lambda: {"StoryType": 2})
    image_size: tuple[int, int] = (64, 64)
    attention_size: tuple[int, int] = (16, 16)
    retry_budget: int = 2
    fallback_to_full_mask: bool = True
    discriminator_mode: str = "all"  # or "two_of_three"
    workers: int = 1

    def validate(self, path: str = "t2i") -> None:
        valid = {c.value for c in InstructionCategory}
        t2i_allowed = {"LongTerm", "PhysicalTrans", "ImplicitLogic", "StoryType", "RealToVirtual"}
        for name, count in self.quotas.items():
            if name not in valid:
                raise ConfigError(f"{path}.quotas.{name}: unknown category")
            if name not in t2i_allowed:
                raise ConfigError(f"{path}.quotas.{name}: not a text-to-image category")
            if count < 0:
                raise ConfigError(f"{path}.quotas.{name}: count must be >= 0")
        if self.discriminator_mode not in ("all", "two_of_three"):
            raise ConfigError(f"{path}.discriminator_mode: must be 'all' or 'two_of_three'")
        if self.retry_budget < 0:
            raise ConfigError(f"{path}.retry_budget: must be >= 0")
        if self.workers < 1:
            raise ConfigError(f"{path}.workers: must be >= 1")


@dataclass
class VideoBranchConfig:
    identity_min: float = 0.6
    window: int = 3
    identity_weight: float = 0.5
    pixel_weight: float = 0.5
    sharpness_min: float = 0.0
    retry_budget: int = 2
    workers: int = 1

    def validate(self, path: str = "video") -> None:
        if not 0.0 <= self.identity_min <= 1.0:
            raise ConfigError(f"{path}.identity_min: must be in [0, 1]")
        if self.window < 1:
            raise ConfigError(f"{path}.window: must be >= 1")
        for name in ("identity_weight", "pixel_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{path}.{name}: must be >= 0")
        if self.sharpness_min < 0:
            raise ConfigError(f"{path}.sharpness_min: must be >= 0")
        if self.workers < 1:
            raise ConfigError(f"{path}.workers: must be >= 1")


@dataclass
class TrainerSection:
    epochs: int = 100
    batch_size: int = 64
    resolution: int = 512
    learning_rate: float = 5e-6
    drop_image: float = 0.05
    drop_text: float = 0.05
    drop_both: float = 0.05

    def validate(self, path: str = "trainer") -> None:
        if self.epochs < 1:
            raise ConfigError(f"{path}.epochs: must be >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"{path}.batch_size: must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"{path}.learning_rate: must be > 0")
        for name in ("drop_image", "drop_text", "drop_both"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{path}.{name}: probability must be in [0, 1]")


@dataclass
class ReviewSection:
    token: str | None = None
    compact_every: int = 50
    rescore_revised: bool = False
    # adapter config for the replacement image backend used by regeneration
    alternate_t2i: dict[str, Any] | None = None
    regen_poll_seconds: float = 2.0

    def validate(self, path: str = "review") -> None:
        if self.compact_every < 1:
            raise ConfigError(f"{path}.compact_every: must be >= 1")
        if self.regen_poll_seconds <= 0:
            raise ConfigError(f"{path}.regen_poll_seconds: must be > 0")


@dataclass
class ForgeConfig:
    seed: int = 0
    dataset_dir: str = "dataset"
    adapters: dict[str, dict[str, Any]] = field(default_factory=dict)
    editmath: EditMathConfig = field(default_factory=EditMathConfig)
    t2i: T2IBranchConfig = field(default_factory=T2IBranchConfig)
    video: VideoBranchConfig = field(default_factory=VideoBranchConfig)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    review: ReviewSection = field(default_factory=ReviewSection)

    def validate(self) -> None:
        self.t2i.validate()
        self.video.validate()
        self.trainer.validate()
        self.review.validate()
        if self.editmath.binarize_factor <= 0:
            raise ConfigError("editmath.binarize_factor: must be > 0")
        if self.editmath.schedule_steps < 1:
            raise ConfigError("editmath.schedule_steps: must be >= 1")
        if not isinstance(self.adapters, dict):
            raise ConfigError("adapters: must be a mapping of kind to settings")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        return stable_digest(json.dumps(self.to_dict(), sort_keys=True, default=str))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ForgeConfig":
        data = dict(data or {})
        cfg = cls()
        sections = {
            "editmath": (EditMathConfig, "editmath"),
            "t2i": (T2IBranchConfig, "t2i"),
            "video": (VideoBranchConfig, "video"),
            "trainer": (TrainerSection, "trainer"),
            "review": (ReviewSection, "review"),
        }
        for key, value in data.items():
            if key in ("seed",):
                cfg.seed = int(value)
            elif key == "dataset_dir":
                cfg.dataset_dir = str(value)
            elif key == "adapters":
                if not isinstance(value, Mapping):
                    raise ConfigError("adapters: must be a mapping")
                cfg.adapters = {k: dict(v or {}) for k, v in value.items()}
            elif key in sections:
                section_cls, prefix = sections[key]
                if not isinstance(value, Mapping):
                    raise ConfigError(f"{prefix}: must be a mapping")
                known = {f.name for f in section_cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
                unknown = set(value) - known
                if unknown:
                    raise ConfigError(f"{prefix}.{sorted(unknown)[0]}: unknown field")
                kwargs = dict(value)
                for tuple_field in ("image_size", "attention_size"):
                    if tuple_field in kwargs:
                        kwargs[tuple_field] = tuple(kwargs[tuple_field])
                setattr(cfg, key, section_cls(**kwargs))
            else:
                raise ConfigError(f"{key}: unknown top-level field")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ForgeConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with path.open("r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(data)
