"""Training loop: phased losses, frozen text tower, cosine-annealed AdamW."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, checkpoint_from_model, save_checkpoint
from .data import AttributeSchema, LabeledSample, compute_imbalance_weights
from .losses import LossSchedule, alignment_loss, prediction_loss
from .metrics import mean_accuracy
from .model import AttributeModel

MODES = ("full", "visual_only", "prompts_only", "frozen_probe")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 2e-3
    min_learning_rate: float = 0.0
    weight_decay: float = 1e-4
    grad_clip: float | None = None
    seed: int = 0
    # full: visual encoder + prompts + head + text bank
    # visual_only: same but the alignment phase is disabled
    # prompts_only: freeze the visual trunk, tune prompts/head/projection/bank
    # frozen_probe: freeze everything except the head; no prompt tokens used
    mode: str = "full"
    weighting: str = "imbalance"  # or "uniform"
    align_weighted: bool = False
    threshold: float = 0.5
    save_every: int | None = None
    out_dir: str | None = None
    # experimental override of the text-tower freeze contract
    unfreeze_text: bool = False
    # run the text forward even in epochs where its loss coefficient is zero
    # (it contributes no gradient either way; useful for logging and tests)
    always_forward_text: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.weighting not in ("imbalance", "uniform"):
            raise ValueError(f"weighting must be 'imbalance' or 'uniform', got {self.weighting!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("need epochs >= 0 and batch_size >= 1")


def cosine_lr(epoch: int, total_epochs: int, base_lr: float, min_lr: float = 0.0) -> float:
    """Closed-form cosine annealing from base_lr at epoch 0 toward min_lr."""
    if total_epochs <= 1:
        return base_lr
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def loss_coefficients(epoch: int, schedule: LossSchedule) -> tuple[float, float]:
    """(alpha, beta) for the epoch; exposed so logs can assert schedule compliance."""
    return schedule.coefficients(epoch)


def trainable_parameter_names(model: AttributeModel, config: TrainConfig) -> list[str]:
    """Parameter names updated under the configured mode. Everything else is frozen."""
    names = []
    for name, param in model.named_parameters():
        if name.startswith("text.") and not config.unfreeze_text:
            continue
        if name == "log_temperature":
            if param.requires_grad:
                names.append(name)
            continue
        if config.mode == "frozen_probe":
            if name.startswith("visual.head."):
                names.append(name)
        elif config.mode == "prompts_only":
            if name == "visual.prompt_tokens" or name.startswith(
                ("visual.head.", "visual.proj.", "bank.")
            ):
                names.append(name)
        elif config.mode == "visual_only":
            if name.startswith("visual."):
                names.append(name)
        else:  # full
            names.append(name)
    return names


def frozen_snapshot(model: AttributeModel) -> dict[str, bytes]:
    return {
        name: param.detach().cpu().numpy().tobytes()
        for name, param in model.named_parameters()
        if not param.requires_grad
    }


def audit_frozen(model: AttributeModel, snapshot: dict[str, bytes], context: str = "") -> None:
    """Byte-compare every frozen parameter against its snapshot."""
    for name, param in model.named_parameters():
        if name in snapshot:
            if param.detach().cpu().numpy().tobytes() != snapshot[name]:
                raise AssertionError(f"frozen parameter {name} mutated {context}".rstrip())


def _resolve_schedule(config: TrainConfig, schedule: LossSchedule | None) -> LossSchedule:
    if config.mode in ("visual_only", "frozen_probe"):
        # these modes have no alignment path; the prediction loss runs alone
        return LossSchedule.constant(config.epochs, 1.0, 0.0)
    return schedule if schedule is not None else LossSchedule.default(config.epochs)


def optimizer_state_arrays(
    optimizer: torch.optim.Optimizer, names: Sequence[str], params: Sequence[torch.Tensor]
) -> dict[str, np.ndarray]:
    arrays = {}
    for name, param in zip(names, params):
        state = optimizer.state.get(param)
        if not state:
            continue
        for key in ("exp_avg", "exp_avg_sq", "step"):
            if key in state:
                value = state[key]
                arrays[f"{name}.{key}"] = (
                    value.detach().cpu().numpy().copy()
                    if torch.is_tensor(value)
                    else np.asarray(value)
                )
    return arrays


def train(
    model: AttributeModel,
    schema: AttributeSchema,
    samples: Sequence[LabeledSample],
    config: TrainConfig,
    schedule: LossSchedule | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Optimize the model on the samples and return the final checkpoint plus the
    per-epoch metrics log (epoch, alpha, beta, l_pred, l_align, mA, lr records)."""
    if not samples:
        raise ValueError("training dataset is empty")
    schedule = _resolve_schedule(config, schedule)
    if schedule.total_epochs != config.epochs:
        raise ValueError(
            f"schedule covers {schedule.total_epochs} epochs but config trains {config.epochs}"
        )
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    weights = (
        compute_imbalance_weights(samples, schema) if config.weighting == "imbalance" else None
    )

    trainable = set(trainable_parameter_names(model, config))
    for name, param in model.named_parameters():
        param.requires_grad_(name in trainable)
    names = [n for n, p in model.named_parameters() if p.requires_grad]
    params = [p for _, p in model.named_parameters() if p.requires_grad]
    if not params:
        raise ValueError(f"mode {config.mode!r} leaves nothing trainable")
    optimizer = torch.optim.AdamW(
        params, lr=config.learning_rate, weight_decay=config.weight_decay
    )
    frozen = frozen_snapshot(model)

    dtype = next(model.parameters()).dtype
    images = torch.from_numpy(
        np.stack([s.image for s in samples]).transpose(0, 3, 1, 2)
    ).to(dtype)
    labels_np = np.stack([s.labels for s in samples])
    labels = torch.from_numpy(labels_np).to(dtype)
    use_prompts = config.mode != "frozen_probe"

    out_dir = Path(config.out_dir) if config.out_dir else None
    log_path = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.jsonl"
        log_path.write_text("")

    log: list[dict] = []
    for epoch in range(config.epochs):
        alpha, beta = schedule.coefficients(epoch)
        lr = cosine_lr(epoch, config.epochs, config.learning_rate, config.min_learning_rate)
        for group in optimizer.param_groups:
            group["lr"] = lr

        run_text = model.text is not None and (beta != 0.0 or config.always_forward_text)
        order = rng.permutation(len(samples))
        pred_sum = align_sum = 0.0
        align_batches = 0
        epoch_preds = np.zeros_like(labels_np)

        for step, start in enumerate(range(0, len(samples), config.batch_size)):
            idx = order[start : start + config.batch_size]
            batch_images = images[idx]
            batch_labels = labels[idx]

            out = model.visual(batch_images, use_prompts=use_prompts)
            if use_prompts:
                logits = model.visual.predict(out.prompt_tokens)
            else:
                logits = model.visual.predict_from_class_token(out.class_token)
            l_pred = prediction_loss(logits, batch_labels, weights)

            l_align = None
            if run_text:
                text_features = model.text_features()
                aligned = model.align(out.prompt_tokens, text_features)
                l_align = alignment_loss(
                    aligned.y_hat_vt, batch_labels, weights if config.align_weighted else None
                )

            # zero-coefficient terms stay out of the graph entirely, so idle
            # branches leave their parameters untouched (no decay, no moments)
            total = 0.0
            if alpha != 0.0:
                total = total + alpha * l_pred
            if beta != 0.0:
                total = total + beta * l_align
            if not torch.is_tensor(total):
                total = l_pred.detach() * 0.0
            if not torch.isfinite(total):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"l_pred={float(l_pred):.4g}"
                    + (f", l_align={float(l_align):.4g}" if l_align is not None else "")
                )

            optimizer.zero_grad(set_to_none=True)
            if total.requires_grad:
                total.backward()
                if config.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
                optimizer.step()

            pred_sum += float(l_pred.detach())
            if l_align is not None:
                align_sum += float(l_align.detach())
                align_batches += 1
            epoch_preds[idx] = (
                torch.sigmoid(logits.detach()).numpy() >= config.threshold
            ).astype(np.int64)

        audit_frozen(model, frozen, context=f"during epoch {epoch}")
        num_batches = math.ceil(len(samples) / config.batch_size)
        try:
            train_ma = mean_accuracy(epoch_preds, labels_np)
        except ValueError:
            train_ma = float("nan")
        record = {
            "epoch": epoch,
            "alpha": alpha,
            "beta": beta,
            "l_pred": pred_sum / num_batches,
            "l_align": align_sum / align_batches if align_batches else None,
            "mA": train_ma,
            "lr": lr,
        }
        log.append(record)
        if log_path:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
        if out_dir and config.save_every and (epoch + 1) % config.save_every == 0:
            ckpt = _snapshot(model, epoch + 1, config, optimizer, names, params)
            save_checkpoint(ckpt, out_dir / f"checkpoint-epoch{epoch + 1:04d}.npz")

    final = _snapshot(model, config.epochs, config, optimizer if config.epochs else None,
                      names, params)
    if out_dir:
        save_checkpoint(final, out_dir / "checkpoint.npz")
    return final, log


def _snapshot(model, epoch, config, optimizer, names, params) -> Checkpoint:
    optim_arrays = (
        optimizer_state_arrays(optimizer, names, params) if optimizer is not None else {}
    )
    train_snapshot = asdict(config)
    return checkpoint_from_model(
        model, epoch=epoch, train_config=train_snapshot, optimizer_state=optim_arrays
    )
