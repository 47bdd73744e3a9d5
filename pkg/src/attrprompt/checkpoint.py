"""Single-file checkpoints: named parameter arrays + a JSON manifest.

Layout of the ``.npz`` container:

* ``param/<name>`` -- one entry per model parameter/buffer, names following
  the module tree (``visual.blocks.0.attn.qkv.weight``, ``bank.person_context``,
  ``text.proj.weight``, ``log_temperature``, ...).
* ``optim/<name>.exp_avg`` / ``.exp_avg_sq`` / ``.step`` -- optimizer moments
  keyed by the parameter they belong to.
* ``__manifest__`` -- UTF-8 JSON: schema names, config sections, epoch.

Reloading reproduces forward outputs bit-identically on the same platform.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .data import AttributeSchema
from .model import AttributeModel
from .text import TextConfig
from .vision import VisualConfig

FORMAT_NAME = "attrprompt-checkpoint"
FORMAT_VERSION = 1
MANIFEST_KEY = "__manifest__"
_PARAM_PREFIX = "param/"
_OPTIM_PREFIX = "optim/"


@dataclass
class LoadReport:
    missing: tuple[str, ...] = ()
    unexpected: tuple[str, ...] = ()

    @property
    def clean(self) -> bool:
        return not self.missing and not self.unexpected


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    manifest: dict
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def epoch(self) -> int:
        return int(self.manifest.get("epoch", 0))

    @property
    def schema(self) -> AttributeSchema:
        return AttributeSchema(tuple(self.manifest["schema"]))

    def has_text_params(self) -> bool:
        return any(k.startswith(("text.", "bank.")) for k in self.params)

    def strip_components(self, prefixes: tuple[str, ...]) -> "Checkpoint":
        """Copy without parameters under the given prefixes (e.g. text weights)."""
        params = {k: v for k, v in self.params.items() if not k.startswith(prefixes)}
        manifest = dict(self.manifest)
        if "text." in str(prefixes) or any(p.startswith("text") for p in prefixes):
            manifest["text"] = None
        return Checkpoint(params=params, manifest=manifest, optimizer=dict(self.optimizer))


def _config_to_dict(config) -> dict:
    d = dataclasses.asdict(config)
    for key, value in d.items():
        if isinstance(value, tuple):
            d[key] = list(value)
    return d


def visual_config_from_dict(d: Mapping) -> VisualConfig:
    d = dict(d)
    if "image_hw" in d:
        d["image_hw"] = tuple(d["image_hw"])
    return VisualConfig(**d)


def text_config_from_dict(d: Mapping) -> TextConfig:
    return TextConfig(**dict(d))


def checkpoint_from_model(
    model: AttributeModel,
    epoch: int = 0,
    train_config: Mapping | None = None,
    optimizer_state: Mapping[str, np.ndarray] | None = None,
) -> Checkpoint:
    params = {
        name: tensor.detach().cpu().numpy().copy()
        for name, tensor in model.state_dict().items()
    }
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "epoch": int(epoch),
        "schema": list(model.schema.names),
        "visual": _config_to_dict(model.visual.config),
        "text": _config_to_dict(model.text.config) if model.text is not None else None,
        "temperature": model.temperature,
        "train": dict(train_config) if train_config else None,
    }
    return Checkpoint(params=params, manifest=manifest, optimizer=dict(optimizer_state or {}))


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest_bytes = np.frombuffer(
        json.dumps(checkpoint.manifest).encode("utf-8"), dtype=np.uint8
    )
    arrays = {_PARAM_PREFIX + k: v for k, v in checkpoint.params.items()}
    arrays.update({_OPTIM_PREFIX + k: v for k, v in checkpoint.optimizer.items()})
    arrays[MANIFEST_KEY] = manifest_bytes
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    with np.load(path) as archive:
        if MANIFEST_KEY not in archive:
            raise ValueError(f"{path}: not a recognized checkpoint (missing manifest)")
        manifest = json.loads(bytes(archive[MANIFEST_KEY]).decode("utf-8"))
        if manifest.get("format") != FORMAT_NAME:
            raise ValueError(f"{path}: unexpected checkpoint format {manifest.get('format')!r}")
        params, optim = {}, {}
        for key in archive.files:
            if key.startswith(_PARAM_PREFIX):
                params[key[len(_PARAM_PREFIX):]] = archive[key]
            elif key.startswith(_OPTIM_PREFIX):
                optim[key[len(_OPTIM_PREFIX):]] = archive[key]
    return Checkpoint(params=params, manifest=manifest, optimizer=optim)


def load_weights(
    model: torch.nn.Module,
    mapping: Mapping[str, np.ndarray],
    strict: bool = True,
    components: tuple[str, ...] | None = None,
) -> LoadReport:
    """Copy a named-array mapping into the model.

    ``components`` restricts both sides to keys under the given prefixes.
    Strict mode raises on any missing or unexpected key; permissive mode loads
    the intersection and reports the rest.
    """
    expected = {
        name: tensor for name, tensor in model.state_dict().items()
    }
    if components is not None:
        expected = {k: v for k, v in expected.items() if k.startswith(components)}
        mapping = {k: v for k, v in mapping.items() if k.startswith(components)}
    missing = tuple(sorted(set(expected) - set(mapping)))
    unexpected = tuple(sorted(set(mapping) - set(expected)))
    report = LoadReport(missing=missing, unexpected=unexpected)
    if strict and not report.clean:
        raise KeyError(
            f"weight mapping mismatch: missing={list(missing)}, unexpected={list(unexpected)}"
        )
    with torch.no_grad():
        for name, tensor in expected.items():
            if name not in mapping:
                continue
            value = torch.from_numpy(np.asarray(mapping[name]))
            if tuple(value.shape) != tuple(tensor.shape):
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {tuple(value.shape)} "
                    f"vs model {tuple(tensor.shape)}"
                )
            tensor.copy_(value.to(tensor.dtype))
    return report


@torch.no_grad()
def seed_prompts_from_class_token(model: AttributeModel) -> None:
    """Re-initialize every visual prompt row to the (loaded) class token."""
    model.visual.prompt_tokens.copy_(
        model.visual.class_token.expand_as(model.visual.prompt_tokens)
    )


def load_pretrained(
    model: AttributeModel, mapping: Mapping[str, np.ndarray], strict: bool = False
) -> LoadReport:
    """Load pretrained dual-encoder weights.

    Missing visual prompt rows are seeded from the loaded class token, and a
    ``logit_scale`` entry (log of inverse temperature) sets the temperature.
    """
    report = load_weights(model, mapping, strict=strict)
    if "visual.prompt_tokens" not in mapping:
        seed_prompts_from_class_token(model)
    if "logit_scale" in mapping:
        scale = float(np.asarray(mapping["logit_scale"]))
        model.log_temperature.copy_(torch.tensor(-scale, dtype=model.log_temperature.dtype))
    return report


def build_model_from_checkpoint(
    checkpoint: Checkpoint,
    head: str = "ffn",
    dtype: torch.dtype = torch.float32,
) -> AttributeModel:
    """Reconstruct a model from a checkpoint manifest and load its weights.

    ``head="ffn"`` builds the text-free variant and reads only visual
    parameters; ``head="align"`` requires the text branch to be present.
    """
    if head not in ("ffn", "align"):
        raise ValueError(f"head must be 'ffn' or 'align', got {head!r}")
    manifest = checkpoint.manifest
    schema = checkpoint.schema
    visual_config = visual_config_from_dict(manifest["visual"])
    if head == "ffn":
        model = AttributeModel(schema, visual_config, include_text=False,
                               temperature=manifest.get("temperature", 0.01))
        model = model.to(dtype)
        load_weights(model, checkpoint.params, strict=True,
                     components=("visual.", "log_temperature"))
        return model
    if manifest.get("text") is None or not checkpoint.has_text_params():
        raise ValueError(
            "alignment head requested but the checkpoint has no text parameters"
        )
    text_config = text_config_from_dict(manifest["text"])
    model = AttributeModel(schema, visual_config, text_config,
                           temperature=manifest.get("temperature", 0.01))
    model = model.to(dtype)
    load_weights(model, checkpoint.params, strict=True)
    return model
