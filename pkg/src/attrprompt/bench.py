"""Relative latency benchmark: text-free head vs alignment head with text forward."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import Checkpoint, build_model_from_checkpoint
from .losses import aligned_similarity
from .model import AttributeModel


@dataclass(frozen=True)
class LatencyReport:
    text_free_ms: float  # median ms per image, FFN head only
    with_text_ms: float  # median ms per image, alignment head incl. text forward
    ratio: float  # text_free / with_text, < 1
    batch: int
    repeats: int

    def as_dict(self) -> dict:
        return {
            "text_free_ms": self.text_free_ms,
            "with_text_ms": self.with_text_ms,
            "ratio": self.ratio,
            "batch": self.batch,
            "repeats": self.repeats,
        }


def latency_bench(
    checkpoint: Checkpoint | AttributeModel,
    batch: int = 4,
    repeats: int = 30,
    warmup: int = 5,
    seed: int = 0,
) -> LatencyReport:
    """Median per-image latency of both heads on random input.

    The with-text arm re-runs the text forward every repetition, mirroring
    methods that need text features at inference; absolute numbers are
    hardware-bound, only the ratio is meaningful.
    """
    if repeats < 10:
        raise ValueError("need repeats >= 10 for a stable median")
    if isinstance(checkpoint, AttributeModel):
        model = checkpoint
    else:
        model = build_model_from_checkpoint(checkpoint, head="align")
    if model.text is None:
        raise ValueError("latency benchmark needs a checkpoint with text parameters")
    model.eval()

    h, w = model.visual.config.image_hw
    dtype = next(model.parameters()).dtype
    generator = torch.Generator().manual_seed(seed)
    images = torch.rand((batch, 3, h, w), generator=generator).to(dtype)

    def run_text_free():
        out = model.visual(images)
        return torch.sigmoid(model.visual.predict(out.prompt_tokens))

    def run_with_text():
        out = model.visual(images)
        text_features = model.text_features()
        return aligned_similarity(
            model.visual.project(out.prompt_tokens), text_features, model.temperature
        ).y_hat_vt

    with torch.no_grad():
        for _ in range(warmup):
            run_text_free()
            run_with_text()
        free_times, text_times = [], []
        for _ in range(repeats):
            start = time.perf_counter()
            run_text_free()
            free_times.append(time.perf_counter() - start)
            start = time.perf_counter()
            run_with_text()
            text_times.append(time.perf_counter() - start)

    free_ms = float(np.median(free_times) * 1e3 / batch)
    text_ms = float(np.median(text_times) * 1e3 / batch)
    ratio = free_ms / text_ms
    if ratio >= 1.0:
        raise RuntimeError(
            f"text-free path measured no faster than the text-using path "
            f"(ratio {ratio:.3f}); rerun on idle hardware"
        )
    return LatencyReport(
        text_free_ms=free_ms, with_text_ms=text_ms, ratio=ratio, batch=batch, repeats=repeats
    )
