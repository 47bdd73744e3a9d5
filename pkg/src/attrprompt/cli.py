"""Command line entry points.

Subcommands::

    attrprompt train --config run.yaml
    attrprompt eval  --checkpoint ckpt.npz --annotations data.tsv --head ffn [--threshold 0.5]
    attrprompt infer --checkpoint ckpt.npz --images imgdir/ --out preds.jsonl
    attrprompt cam   --checkpoint ckpt.npz --image person.png --attribute Hat --out cam.png
    attrprompt bench --checkpoint ckpt.npz --batch 4 --repeats 30
    attrprompt synth --A 5 --N 512 --seed 0 --out data/
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import latency_bench
from .cam import emit_cam
from .checkpoint import build_model_from_checkpoint, load_checkpoint
from .config import build_model, load_dataset, load_run_config
from .data import generate_synthetic_dataset, load_annotations, split_synthetic, write_annotations
from .inference import infer, load_image_dir, write_predictions
from .metrics import compute_metrics
from .trainer import train


def _cmd_train(args) -> int:
    config = load_run_config(args.config)
    schema, by_split = load_dataset(config)
    if "train" not in by_split:
        print("error: dataset has no train split", file=sys.stderr)
        return 1
    model = build_model(config, schema)
    checkpoint, log = train(model, schema, by_split["train"], config.train, schedule=config.schedule)
    last = log[-1]
    print(
        f"trained {len(log)} epochs: mA={last['mA']:.4f} "
        f"l_pred={last['l_pred']:.4f} lr={last['lr']:.2e}"
    )
    if config.train.out_dir:
        print(f"checkpoints and metrics.jsonl under {config.train.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    model = build_model_from_checkpoint(checkpoint, head=args.head)
    schema = checkpoint.schema
    _, samples = load_annotations(
        args.annotations, split=args.split, image_hw=model.visual.config.image_hw
    )
    if not samples:
        print(f"error: no rows for split {args.split!r}", file=sys.stderr)
        return 1
    records = infer(model, [s.image for s in samples], ids=[s.id for s in samples],
                    head=args.head, threshold=args.threshold)
    preds = np.stack([r.binary for r in records])
    labels = np.stack([s.labels for s in samples])
    report = compute_metrics(preds, labels)
    print(json.dumps({
        "split": args.split,
        "head": args.head,
        "threshold": args.threshold,
        "n": len(samples),
        "attributes": list(schema.names),
        "mA": report.mA,
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
    }, indent=2))
    return 0


def _cmd_infer(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    model = build_model_from_checkpoint(checkpoint, head=args.head)
    images, ids = load_image_dir(args.images, image_hw=model.visual.config.image_hw)
    if not images:
        print(f"error: no images found under {args.images}", file=sys.stderr)
        return 1
    records = infer(model, images, ids=ids, head=args.head, threshold=args.threshold)
    write_predictions(records, args.out)
    print(f"wrote {len(records)} predictions to {args.out}")
    return 0


def _cmd_cam(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    emit_cam(checkpoint, args.image, args.attribute, args.out, method=args.method)
    print(f"wrote {args.out}")
    return 0


def _cmd_bench(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    report = latency_bench(checkpoint, batch=args.batch, repeats=args.repeats)
    print(json.dumps(report.as_dict(), indent=2))
    return 0


def _cmd_synth(args) -> int:
    schema, samples = generate_synthetic_dataset(
        num_attributes=args.A, num_samples=args.N, seed=args.seed
    )
    by_split = split_synthetic(samples)
    out = Path(args.out)
    write_annotations(out / "annotations.tsv", schema, by_split)
    counts = {split: len(v) for split, v in by_split.items()}
    print(f"wrote {sum(counts.values())} samples ({counts}) to {out / 'annotations.tsv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attrprompt", description="Prompt-driven multi-attribute recognition toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a YAML run config")
    p.add_argument("--config", required=True, help="path to the run YAML")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an annotation file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--head", choices=("ffn", "align"), default="ffn")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="predict attributes for a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="directory of png/jpg images")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--head", choices=("ffn", "align"), default="ffn")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("cam", help="render an attention heatmap for one attribute")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--attribute", required=True, help="attribute name from the checkpoint schema")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--method", choices=("rollout", "grad"), default="rollout")
    p.set_defaults(func=_cmd_cam)

    p = sub.add_parser("bench", help="compare text-free vs text-using inference latency")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--repeats", type=int, default=30)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic colored-cue dataset")
    p.add_argument("--A", type=int, required=True, help="number of attributes")
    p.add_argument("--N", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
