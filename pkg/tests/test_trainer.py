"""Training loop: mode freezes, schedule handling, lr curve, logging, checkpoints."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
import torch

from attrprompt.data import generate_synthetic_dataset
from attrprompt.losses import LossSchedule
from attrprompt.model import AttributeModel
from attrprompt.text import TextConfig
from attrprompt.trainer import (
    TrainConfig,
    cosine_lr,
    frozen_snapshot,
    audit_frozen,
    train,
    trainable_parameter_names,
)
from attrprompt.vision import VisualConfig


@pytest.fixture(scope="module")
def train_data():
    schema, samples = generate_synthetic_dataset(3, 16, image_hw=(32, 32), seed=2)
    return schema, samples


def make_model(seed=0):
    torch.manual_seed(seed)
    visual = VisualConfig(image_hw=(32, 32), patch_size=8, width=32, depth=2, heads=4, shared_dim=16)
    text = TextConfig(width=32, depth=2, heads=4, max_len=24, shared_dim=16,
                      person_tokens=2, attribute_tokens=4)
    schema, _ = generate_synthetic_dataset(3, 1, image_hw=(32, 32), seed=0)
    return AttributeModel(schema, visual, text_config=text, temperature=0.02)


def snapshot(model):
    return {n: p.detach().clone() for n, p in model.named_parameters()}


def changed_names(before, model):
    return {
        n for n, p in model.named_parameters() if not torch.equal(before[n], p.detach())
    }


class TestCosineLr:
    def test_closed_form(self):
        assert cosine_lr(0, 100, 2e-3) == pytest.approx(2e-3)
        assert cosine_lr(50, 100, 2e-3) == pytest.approx(1e-3)
        expected = 0.5 * 2e-3 * (1 + math.cos(math.pi * 99 / 100))
        assert cosine_lr(99, 100, 2e-3) == pytest.approx(expected)

    def test_min_lr_floor(self):
        assert cosine_lr(100, 100, 1e-3, min_lr=1e-5) == pytest.approx(1e-5)

    def test_monotone_decay(self):
        values = [cosine_lr(e, 50, 1e-3) for e in range(50)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestModeFreezing:
    def test_full_mode_trains_everything_but_text(self):
        model = make_model()
        names = set(trainable_parameter_names(model, TrainConfig(mode="full")))
        assert "visual.prompt_tokens" in names
        assert "bank.person_context" in names
        assert "bank.attribute_contexts" in names
        assert any(n.startswith("visual.blocks.") for n in names)
        assert not any(n.startswith("text.") for n in names)
        assert "log_temperature" not in names  # fixed unless made learnable

    def test_prompts_only_keeps_trunk_frozen(self):
        model = make_model()
        names = set(trainable_parameter_names(model, TrainConfig(mode="prompts_only")))
        assert "visual.prompt_tokens" in names
        assert "bank.attribute_contexts" in names
        assert not any(n.startswith("visual.blocks.") for n in names)
        assert not any(n.startswith("visual.patch_embed") for n in names)

    def test_frozen_probe_trains_head_only(self):
        model = make_model()
        names = set(trainable_parameter_names(model, TrainConfig(mode="frozen_probe")))
        assert names and all(n.startswith("visual.head.") for n in names)

    def test_unfreeze_text_override(self):
        model = make_model()
        for p in model.text.parameters():
            p.requires_grad_(True)  # the trainer re-derives this from the mode
        names = set(
            trainable_parameter_names(model, TrainConfig(mode="full", unfreeze_text=True))
        )
        assert any(n.startswith("text.") for n in names)

    def test_text_tower_untouched_after_steps(self, train_data):
        schema, samples = train_data
        model = make_model()
        before = snapshot(model)
        config = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, seed=0)
        train(model, schema, samples, config,
              schedule=LossSchedule.constant(2, 1.0, 1.0))
        changed = changed_names(before, model)
        assert not any(n.startswith("text.") for n in changed)
        assert "visual.prompt_tokens" in changed
        assert "bank.attribute_contexts" in changed

    def test_audit_raises_on_mutated_frozen_param(self):
        model = make_model()
        model.visual.requires_grad_(False)
        snap = frozen_snapshot(model)
        with torch.no_grad():
            model.visual.class_token += 1.0
        with pytest.raises(AssertionError, match="class_token"):
            audit_frozen(model, snap)


class TestIdleBranches:
    def test_zero_beta_epochs_leave_bank_untouched(self, train_data):
        # with the default schedule the text branch is idle before epoch 10,
        # so a 3-epoch run must leave every text-side parameter bit-identical
        schema, samples = train_data
        model = make_model()
        before = snapshot(model)
        train(model, schema, samples, TrainConfig(epochs=3, batch_size=8, seed=0))
        changed = changed_names(before, model)
        assert not any(n.startswith(("bank.", "text.")) for n in changed)
        assert "visual.prompt_tokens" in changed

    def test_pred_only_epochs_match_with_and_without_text_forward(self, train_data):
        # running the idle text forward pass must not alter visual updates
        schema, samples = train_data
        results = {}
        for always in (False, True):
            model = make_model()
            config = TrainConfig(
                epochs=2, batch_size=8, seed=0, always_forward_text=always
            )
            train(model, schema, samples, config)
            results[always] = snapshot(model)
        for name in results[False]:
            assert torch.equal(results[False][name], results[True][name]), name

    def test_zero_alpha_epochs_leave_head_untouched(self, train_data):
        schema, samples = train_data
        model = make_model()
        before = snapshot(model)
        train(model, schema, samples, TrainConfig(epochs=2, batch_size=8, seed=0),
              schedule=LossSchedule.constant(2, 0.0, 1.0))
        changed = changed_names(before, model)
        assert not any(n.startswith("visual.head.") for n in changed)
        assert "bank.attribute_contexts" in changed


class TestScheduleHandling:
    def test_visual_only_forces_pred_only(self, train_data):
        schema, samples = train_data
        model = make_model()
        _, log = train(
            model, schema, samples, TrainConfig(epochs=2, batch_size=8, mode="visual_only")
        )
        assert all(r["alpha"] == 1.0 and r["beta"] == 0.0 for r in log)
        assert all(r["l_align"] is None for r in log)

    def test_schedule_length_mismatch_rejected(self, train_data):
        schema, samples = train_data
        model = make_model()
        with pytest.raises(ValueError, match="epochs"):
            train(model, schema, samples, TrainConfig(epochs=5, batch_size=8),
                  schedule=LossSchedule.constant(3, 1.0, 0.0))

    def test_log_records_schedule_and_lr(self, train_data):
        schema, samples = train_data
        model = make_model()
        config = TrainConfig(epochs=3, batch_size=8, learning_rate=1e-3)
        _, log = train(model, schema, samples, config,
                       schedule=LossSchedule.from_dicts(
                           [{"start_epoch": 0, "alpha": 1.0, "beta": 0.0},
                            {"start_epoch": 2, "alpha": 1.0, "beta": 0.5}],
                           total_epochs=3,
                       ))
        assert [r["epoch"] for r in log] == [0, 1, 2]
        assert [(r["alpha"], r["beta"]) for r in log] == [(1.0, 0.0), (1.0, 0.0), (1.0, 0.5)]
        assert log[2]["l_align"] is not None
        for epoch, record in enumerate(log):
            assert record["lr"] == pytest.approx(cosine_lr(epoch, 3, 1e-3))
            assert set(record) >= {"epoch", "alpha", "beta", "l_pred", "l_align", "mA", "lr"}


class TestArtifacts:
    def test_metrics_jsonl_and_checkpoints(self, tmp_path, train_data):
        schema, samples = train_data
        model = make_model()
        config = TrainConfig(
            epochs=2, batch_size=8, out_dir=str(tmp_path / "run"), save_every=1
        )
        ckpt, log = train(model, schema, samples, config)
        lines = (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0])["epoch"] == 0
        assert (tmp_path / "run" / "checkpoint.npz").exists()
        assert (tmp_path / "run" / "checkpoint-epoch0001.npz").exists()
        assert ckpt.epoch == 2
        assert ckpt.manifest["train"]["mode"] == "full"

    def test_final_checkpoint_carries_optimizer_moments(self, train_data):
        schema, samples = train_data
        model = make_model()
        ckpt, _ = train(model, schema, samples, TrainConfig(epochs=1, batch_size=8))
        assert "visual.prompt_tokens.exp_avg" in ckpt.optimizer
        assert "visual.prompt_tokens.exp_avg_sq" in ckpt.optimizer


class TestDeterminism:
    def test_same_seed_same_training(self, train_data):
        schema, samples = train_data
        runs = []
        for _ in range(2):
            model = make_model(seed=4)
            train(model, schema, samples, TrainConfig(epochs=2, batch_size=8, seed=4))
            runs.append(snapshot(model))
        for name in runs[0]:
            assert torch.equal(runs[0][name], runs[1][name]), name


class TestValidation:
    def test_empty_dataset_rejected(self, train_data):
        schema, _ = train_data
        with pytest.raises(ValueError, match="empty"):
            train(make_model(), schema, [], TrainConfig(epochs=1))

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            TrainConfig(mode="finetune")

    def test_bad_weighting_rejected(self):
        with pytest.raises(ValueError, match="weighting"):
            TrainConfig(weighting="focal")
