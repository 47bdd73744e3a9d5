"""Alignment similarity, prediction/alignment losses, and the phased loss schedule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .data import ImbalanceWeights

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class Phase:
    start_epoch: int
    alpha: float
    beta: float

    def __post_init__(self):
        if self.start_epoch < 0:
            raise ValueError("start_epoch must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss coefficients must be >= 0")


@dataclass(frozen=True)
class LossSchedule:
    """Epoch-indexed (alpha, beta) coefficients partitioning [0, total_epochs)."""

    phases: tuple[Phase, ...]
    total_epochs: int

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if self.total_epochs < 0:
            raise ValueError("total_epochs must be >= 0")
        if self.total_epochs == 0:
            return
        if not self.phases:
            raise ValueError("schedule needs at least one phase")
        starts = [p.start_epoch for p in self.phases]
        if starts[0] != 0:
            raise ValueError("first phase must start at epoch 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("phase start epochs must be strictly increasing")
        if starts[-1] >= self.total_epochs:
            raise ValueError("phase starts must lie inside [0, total_epochs)")

    @classmethod
    def default(cls, total_epochs: int) -> "LossSchedule":
        """Three-phase recipe: (1,0) for epochs 0-9, (0,1) for 10-19, (1,0.5) after."""
        if total_epochs == 0:
            return cls((), 0)
        phases = [Phase(0, 1.0, 0.0), Phase(10, 0.0, 1.0), Phase(20, 1.0, 0.5)]
        return cls(tuple(p for p in phases if p.start_epoch < total_epochs), total_epochs)

    @classmethod
    def constant(cls, total_epochs: int, alpha: float, beta: float) -> "LossSchedule":
        if total_epochs == 0:
            return cls((), 0)
        return cls((Phase(0, alpha, beta),), total_epochs)

    @classmethod
    def from_dicts(cls, entries: Sequence[dict], total_epochs: int) -> "LossSchedule":
        """Build from run-config entries of the form {start_epoch, alpha, beta}."""
        phases = tuple(
            Phase(int(e["start_epoch"]), float(e["alpha"]), float(e["beta"])) for e in entries
        )
        return cls(phases, total_epochs)

    def coefficients(self, epoch: int) -> tuple[float, float]:
        if epoch < 0 or epoch >= self.total_epochs:
            raise ValueError(f"epoch {epoch} outside schedule coverage [0, {self.total_epochs})")
        current = self.phases[0]
        for phase in self.phases:
            if phase.start_epoch <= epoch:
                current = phase
            else:
                break
        return current.alpha, current.beta


@dataclass
class AlignmentOutput:
    """Row-paired cosine similarities and their temperature-scaled sigmoid scores."""

    similarities: torch.Tensor  # (..., A) in [-1, 1]
    y_hat_vt: torch.Tensor  # (..., A) in (0, 1)
    temperature: float


def aligned_similarity(
    visual_features: torch.Tensor,
    text_features: torch.Tensor,
    temperature: float,
) -> AlignmentOutput:
    """Diagonal cosine alignment: row j of the visual features against row j of the text
    features only, never a full pairwise matrix. Scores are sigmoid(cos / temperature).

    ``visual_features`` may carry a leading batch dimension; ``text_features`` is (A, d).
    """
    if float(temperature) <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if visual_features.shape[-1] != text_features.shape[-1]:
        raise ValueError(
            f"feature widths differ: {visual_features.shape[-1]} vs {text_features.shape[-1]}"
        )
    if visual_features.shape[-2] != text_features.shape[-2]:
        raise ValueError(
            f"attribute counts differ: {visual_features.shape[-2]} vs {text_features.shape[-2]}"
        )
    _check_nonzero_rows(visual_features, "visual")
    _check_nonzero_rows(text_features, "text")
    v_norm = visual_features.norm(dim=-1)
    t_norm = text_features.norm(dim=-1)
    sims = (visual_features * text_features).sum(dim=-1) / (v_norm * t_norm)
    return AlignmentOutput(
        similarities=sims,
        y_hat_vt=torch.sigmoid(sims / temperature),
        temperature=float(temperature),
    )


def _check_nonzero_rows(features: torch.Tensor, side: str) -> None:
    norms = features.detach().norm(dim=-1)
    if (norms == 0).any():
        idx = int((norms == 0).reshape(-1, norms.shape[-1]).any(dim=0).nonzero()[0])
        raise ValueError(f"{side} feature row for attribute {idx} has zero norm; cosine undefined")


def _validate_binary(targets: torch.Tensor) -> torch.Tensor:
    targets = targets.to(torch.float64) if targets.dtype == torch.float64 else targets.float()
    bad = (targets != 0) & (targets != 1)
    if bad.any():
        raise ValueError("ground-truth labels must be 0/1")
    return targets


def _weighted_bce(
    probs: torch.Tensor,
    targets: torch.Tensor,
    weights: ImbalanceWeights | None,
) -> torch.Tensor:
    targets = _validate_binary(targets)
    if probs.shape != targets.shape:
        raise ValueError(f"shape mismatch: predictions {tuple(probs.shape)} vs labels {tuple(targets.shape)}")
    targets = targets.to(probs.dtype)
    probs = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    nll = -(targets * probs.log() + (1.0 - targets) * (1.0 - probs).log())
    if weights is not None:
        w = torch.as_tensor(weights.select(targets.detach().cpu().numpy()),
                            dtype=probs.dtype, device=probs.device)
        nll = nll * w
    per_sample = nll.sum(dim=-1)
    return per_sample.mean() if per_sample.ndim else per_sample


def prediction_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    weights: ImbalanceWeights | None = None,
) -> torch.Tensor:
    """Imbalance-weighted binary cross entropy on sigmoid(logits).

    Sum over attributes, mean over the batch; probabilities clamped to
    [1e-7, 1 - 1e-7]. ``weights=None`` falls back to uniform weights.
    """
    return _weighted_bce(torch.sigmoid(logits), targets, weights)


def alignment_loss(
    y_hat_vt: torch.Tensor,
    targets: torch.Tensor,
    weights: ImbalanceWeights | None = None,
) -> torch.Tensor:
    """Binary cross entropy between alignment scores and labels (unweighted by default)."""
    return _weighted_bce(y_hat_vt, targets, weights)


def combined_loss(epoch: int, l_pred, l_align, schedule: LossSchedule):
    """alpha * l_pred + beta * l_align with coefficients looked up by epoch."""
    alpha, beta = schedule.coefficients(epoch)
    return alpha * l_pred + beta * l_align
