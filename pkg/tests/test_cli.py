"""End-to-end command line flows on a miniature dataset."""

from __future__ import annotations

import json

import numpy as np
import pytest
import yaml
from PIL import Image

from attrprompt.cli import main
from attrprompt.config import ConfigError, load_run_config, parse_run_config
from attrprompt.inference import read_predictions


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> train once; downstream commands reuse the checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    assert main(["synth", "--A", "3", "--N", "30", "--seed", "2", "--out", str(data_dir)]) == 0

    run_yaml = root / "run.yaml"
    run_yaml.write_text(
        yaml.safe_dump(
            {
                "seed": 1,
                "data": {"annotations": str(data_dir / "annotations.tsv"), "image_hw": [32, 32]},
                "model": {
                    "visual": {
                        "image_hw": [32, 32], "patch_size": 8, "width": 32,
                        "depth": 2, "heads": 4, "shared_dim": 16,
                    },
                    "text": {
                        "width": 32, "depth": 2, "heads": 4, "max_len": 24,
                        "shared_dim": 16, "person_tokens": 2, "attribute_tokens": 4,
                    },
                    "temperature": 0.02,
                },
                "train": {
                    "epochs": 3,
                    "batch_size": 8,
                    "learning_rate": 0.001,
                    "out_dir": str(root / "run"),
                    "schedule": [
                        {"start_epoch": 0, "alpha": 1.0, "beta": 0.0},
                        {"start_epoch": 2, "alpha": 1.0, "beta": 0.5},
                    ],
                },
            }
        )
    )
    assert main(["train", "--config", str(run_yaml)]) == 0
    return root, data_dir, root / "run" / "checkpoint.npz"


class TestSynth:
    def test_annotation_file_layout(self, workspace):
        _, data_dir, _ = workspace
        lines = (data_dir / "annotations.tsv").read_text().splitlines()
        assert lines[0].startswith("#attributes\t")
        assert len(lines) == 31
        assert (data_dir / "images").is_dir()


class TestTrain:
    def test_produces_checkpoint_and_log(self, workspace):
        root, _, ckpt = workspace
        assert ckpt.exists()
        log = [json.loads(l) for l in (root / "run" / "metrics.jsonl").read_text().splitlines()]
        assert len(log) == 3
        assert log[0]["beta"] == 0.0 and log[2]["beta"] == 0.5


class TestEval:
    def test_ffn_head_json_report(self, workspace, capsys):
        _, data_dir, ckpt = workspace
        code = main([
            "eval", "--checkpoint", str(ckpt),
            "--annotations", str(data_dir / "annotations.tsv"),
            "--head", "ffn", "--split", "train",
        ])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["head"] == "ffn"
        assert 0.0 <= report["mA"] <= 1.0
        assert report["attributes"] == ["attr00", "attr01", "attr02"]

    def test_align_head_with_threshold(self, workspace, capsys):
        _, data_dir, ckpt = workspace
        code = main([
            "eval", "--checkpoint", str(ckpt),
            "--annotations", str(data_dir / "annotations.tsv"),
            "--head", "align", "--threshold", "0.6", "--split", "train",
        ])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["threshold"] == 0.6


class TestInfer:
    def test_writes_jsonl(self, workspace, tmp_path):
        _, data_dir, ckpt = workspace
        out = tmp_path / "preds.jsonl"
        code = main([
            "infer", "--checkpoint", str(ckpt),
            "--images", str(data_dir / "images"), "--out", str(out),
        ])
        assert code == 0
        rows = read_predictions(out)
        assert len(rows) == 30
        assert set(rows[0]) == {"id", "probabilities", "binary"}
        assert len(rows[0]["probabilities"]) == 3


class TestCam:
    def test_writes_overlay_png(self, workspace, tmp_path):
        _, data_dir, ckpt = workspace
        image = next((data_dir / "images").glob("*.png"))
        out = tmp_path / "cam.png"
        code = main([
            "cam", "--checkpoint", str(ckpt), "--image", str(image),
            "--attribute", "attr01", "--out", str(out),
        ])
        assert code == 0
        with Image.open(out) as im:
            assert im.size == (32, 32)


class TestBench:
    def test_reports_ratio_below_one(self, workspace, capsys):
        _, _, ckpt = workspace
        code = main(["bench", "--checkpoint", str(ckpt), "--batch", "1", "--repeats", "10"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["ratio"] < 1.0


class TestRunConfigParsing:
    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="sections"):
            parse_run_config({"data": {"synthetic": {}}, "optimizer": {}})

    def test_unknown_train_key_rejected(self):
        with pytest.raises(ConfigError, match="train"):
            parse_run_config({"data": {"synthetic": {}}, "train": {"lr": 0.1}})

    def test_data_requires_exactly_one_source(self):
        with pytest.raises(ConfigError, match="exactly one"):
            parse_run_config({"data": {}})
        with pytest.raises(ConfigError, match="exactly one"):
            parse_run_config(
                {"data": {"annotations": "x.tsv", "synthetic": {"num_attributes": 2}}}
            )

    def test_text_null_drops_branch(self):
        config = parse_run_config({"data": {"synthetic": {}}, "model": {"text": None}})
        assert config.text is None

    def test_shared_dim_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="shared_dim"):
            parse_run_config(
                {
                    "data": {"synthetic": {}},
                    "model": {"visual": {"shared_dim": 64}, "text": {"shared_dim": 32}},
                }
            )

    def test_schedule_parsed_from_train_section(self):
        config = parse_run_config(
            {
                "data": {"synthetic": {}},
                "train": {
                    "epochs": 4,
                    "schedule": [
                        {"start_epoch": 0, "alpha": 1.0, "beta": 0.0},
                        {"start_epoch": 2, "alpha": 0.0, "beta": 1.0},
                    ],
                },
            }
        )
        assert config.schedule.coefficients(3) == (0.0, 1.0)

    def test_yaml_file_round_trip(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("data:\n  synthetic: {num_attributes: 2, num_samples: 8}\nseed: 9\n")
        config = load_run_config(path)
        assert config.seed == 9
        assert config.data.synthetic.num_attributes == 2
