"""YAML run configuration.

A run file has four sections, all optional except ``data``::

    seed: 0
    data:
      annotations: path/to/annotations.tsv     # or `synthetic: {...}`
      image_hw: [256, 192]
    model:
      visual: {width: 768, depth: 12, ...}
      text: {width: 512, ...}                  # `text: null` drops the branch
      temperature: 0.01
    train:
      epochs: 100
      schedule:                                # optional, else built-in phases
        - {start_epoch: 0, alpha: 1.0, beta: 0.0}
        - {start_epoch: 10, alpha: 0.0, beta: 1.0}

Unknown keys raise instead of being ignored, so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import torch
import yaml

from .data import (
    AttributeSchema,
    LabeledSample,
    generate_synthetic_dataset,
    load_annotations,
    split_synthetic,
)
from .losses import LossSchedule
from .model import AttributeModel
from .trainer import TrainConfig
from .text import TextConfig
from .vision import VisualConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    num_attributes: int = 5
    num_samples: int = 512
    image_hw: tuple = (48, 48)
    seed: int = 0
    distractors: int = 0


@dataclass(frozen=True)
class DataConfig:
    annotations: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    image_hw: Optional[tuple] = None
    pixel_mean: Optional[tuple] = None
    pixel_std: Optional[tuple] = None

    def __post_init__(self):
        if (self.annotations is None) == (self.synthetic is None):
            raise ConfigError("data needs exactly one of `annotations` or `synthetic`")


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    visual: VisualConfig = VisualConfig()
    text: Optional[TextConfig] = TextConfig()
    temperature: float = 0.01
    learnable_temperature: bool = False
    warm_start_text: bool = False
    train: TrainConfig = TrainConfig()
    schedule: Optional[LossSchedule] = None
    seed: int = 0


def _build(cls, section: dict, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(section) - known
    if extra:
        raise ConfigError(f"unknown keys in `{name}`: {sorted(extra)}")
    coerced = {}
    for f in dataclasses.fields(cls):
        if f.name not in section:
            continue
        value = section[f.name]
        if isinstance(value, list) and "tuple" in str(f.type):
            value = tuple(value)
        coerced[f.name] = value
    return cls(**coerced)


def parse_run_config(raw: dict[str, Any]) -> RunConfig:
    raw = dict(raw or {})
    known_sections = {"seed", "data", "model", "train"}
    extra = set(raw) - known_sections
    if extra:
        raise ConfigError(f"unknown top-level sections: {sorted(extra)}")

    data_raw = dict(raw.get("data") or {})
    if "synthetic" in data_raw and data_raw["synthetic"] is not None:
        data_raw["synthetic"] = _build(SyntheticSpec, dict(data_raw["synthetic"]), "data.synthetic")
    data = _build(DataConfig, data_raw, "data")

    model_raw = dict(raw.get("model") or {})
    model_extra = set(model_raw) - {
        "visual",
        "text",
        "temperature",
        "learnable_temperature",
        "warm_start_text",
    }
    if model_extra:
        raise ConfigError(f"unknown keys in `model`: {sorted(model_extra)}")
    visual = _build(VisualConfig, dict(model_raw.get("visual") or {}), "model.visual")
    if "text" in model_raw and model_raw["text"] is None:
        text = None
    else:
        text = _build(TextConfig, dict(model_raw.get("text") or {}), "model.text")
    if text is not None and text.shared_dim != visual.shared_dim:
        raise ConfigError(
            f"model.visual.shared_dim={visual.shared_dim} != model.text.shared_dim={text.shared_dim}"
        )

    train_raw = dict(raw.get("train") or {})
    schedule = None
    if "schedule" in train_raw:
        phases = train_raw.pop("schedule")
        epochs = train_raw.get("epochs", TrainConfig().epochs)
        schedule = LossSchedule.from_dicts(phases, total_epochs=epochs)
    train = _build(TrainConfig, train_raw, "train")

    return RunConfig(
        data=data,
        visual=visual,
        text=text,
        temperature=float(model_raw.get("temperature", 0.01)),
        learnable_temperature=bool(model_raw.get("learnable_temperature", False)),
        warm_start_text=bool(model_raw.get("warm_start_text", False)),
        train=train,
        schedule=schedule,
        seed=int(raw.get("seed", 0)),
    )


def load_run_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level, got {type(raw).__name__}")
    return parse_run_config(raw)


def load_dataset(config: RunConfig) -> tuple[AttributeSchema, dict[str, list[LabeledSample]]]:
    """Materialise the dataset a run config points at, keyed by split."""
    data = config.data
    if data.synthetic is not None:
        spec = data.synthetic
        schema, samples = generate_synthetic_dataset(
            num_attributes=spec.num_attributes,
            num_samples=spec.num_samples,
            image_hw=tuple(spec.image_hw),
            seed=spec.seed,
            distractors=spec.distractors,
        )
        return schema, split_synthetic(samples)
    by_split = {}
    schema = None
    for split in ("train", "val", "test"):
        schema, samples = load_annotations(
            data.annotations,
            split=split,
            image_hw=data.image_hw,
            pixel_mean=data.pixel_mean,
            pixel_std=data.pixel_std,
        )
        if samples:
            by_split[split] = samples
    if not by_split:
        raise ConfigError(f"{data.annotations}: no rows in any of train/val/test")
    return schema, by_split


def build_model(config: RunConfig, schema: AttributeSchema) -> AttributeModel:
    """Instantiate the model with all random init under the run seed."""
    torch.manual_seed(config.seed)
    return AttributeModel(
        schema,
        config.visual,
        text_config=config.text,
        temperature=config.temperature,
        learnable_temperature=config.learnable_temperature,
        include_text=config.text is not None,
        warm_start_text=config.warm_start_text,
    )
