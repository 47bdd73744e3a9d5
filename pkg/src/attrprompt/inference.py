"""Inference over checkpoints: text-free FFN head or the alignment head."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, build_model_from_checkpoint
from .losses import aligned_similarity
from .model import AttributeModel
from .vision import to_image_tensor


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    probabilities: np.ndarray  # (A,) in (0, 1)
    binary: np.ndarray  # (A,) int, probabilities >= threshold
    source: str  # "ffn-head" | "alignment-head"


def infer(
    checkpoint: Checkpoint | AttributeModel,
    images: Sequence[np.ndarray],
    ids: Sequence[str] | None = None,
    head: str = "ffn",
    threshold: float = 0.5,
    batch_size: int = 32,
) -> list[PredictionRecord]:
    """Predict attribute probabilities for a sequence of (H, W, 3) images.

    The default FFN head touches only the visual encoder, prompts and head;
    text parameters are never loaded. The alignment head computes the text
    features once and reuses them for every image.
    """
    if head not in ("ffn", "align"):
        raise ValueError(f"head must be 'ffn' or 'align', got {head!r}")
    if isinstance(checkpoint, AttributeModel):
        model = checkpoint
        if head == "align" and model.text is None:
            raise ValueError("alignment head requested but the model has no text branch")
    else:
        model = build_model_from_checkpoint(checkpoint, head=head)
    model.eval()

    ids = list(ids) if ids is not None else [f"image{i:05d}" for i in range(len(images))]
    if len(ids) != len(images):
        raise ValueError(f"{len(ids)} ids for {len(images)} images")

    text_features = None
    if head == "align":
        with torch.no_grad():
            text_features = model.text_features()

    dtype = next(model.parameters()).dtype
    records = []
    source = "ffn-head" if head == "ffn" else "alignment-head"
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start : start + batch_size]
            batch = to_image_tensor(np.stack([np.asarray(im) for im in chunk]), dtype=dtype)
            out = model.visual(batch)
            if head == "ffn":
                probs = torch.sigmoid(model.visual.predict(out.prompt_tokens))
            else:
                aligned = aligned_similarity(
                    model.visual.project(out.prompt_tokens), text_features, model.temperature
                )
                probs = aligned.y_hat_vt
            probs_np = probs.cpu().numpy()
            for offset, row in enumerate(probs_np):
                records.append(
                    PredictionRecord(
                        id=ids[start + offset],
                        probabilities=row.astype(np.float64),
                        binary=(row >= threshold).astype(np.int64),
                        source=source,
                    )
                )
    return records


def load_image_dir(
    path: str | Path, image_hw: tuple[int, int] | None = None
) -> tuple[list[np.ndarray], list[str]]:
    """Load every png/jpg/bmp directly under a directory, sorted by filename."""
    from .data import _load_image

    path = Path(path)
    if not path.is_dir():
        raise NotADirectoryError(f"{path} is not a directory")
    files = sorted(
        p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    )
    images = [_load_image(p, image_hw, None, None) for p in files]
    return images, [p.name for p in files]


def write_predictions(records: Sequence[PredictionRecord], path: str | Path) -> Path:
    """Line-delimited JSON dump: {id, probabilities, binary} per record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "id": record.id,
                        "probabilities": [float(p) for p in record.probabilities],
                        "binary": [int(b) for b in record.binary],
                    }
                )
                + "\n"
            )
    return path


def read_predictions(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
