"""Attribute schemas, annotation file IO, synthetic data, and imbalance weights.

Annotation file format (UTF-8, tab-separated):

    #attributes<TAB>name1<TAB>...<TAB>nameA
    image_relpath<TAB>split<TAB>b1 b2 ... bA

One header line, then one line per sample. ``split`` is one of ``train``,
``val``, ``test``; the label field holds A space-separated 0/1 values.
Image paths resolve relative to the annotation file's directory.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

SPLITS = ("train", "val", "test")

# Cue palette for synthetic data: channel values on a 0/0.5/1 grid, so any two
# colors differ by >= 0.5 in some channel and a 0.2 detection threshold can
# never confuse them. Pure hues first, (0.5, 0.5, 0.5) excluded because it
# collides with the gray background band.
_CORNERS = (
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 0.0, 1.0),
    (1.0, 1.0, 0.0),
    (1.0, 0.0, 1.0),
    (0.0, 1.0, 1.0),
    (0.0, 0.0, 0.0),
    (1.0, 1.0, 1.0),
)
CUE_PALETTE: tuple[tuple[float, float, float], ...] = _CORNERS + tuple(
    c for c in itertools.product((0.0, 0.5, 1.0), repeat=3)
    if c not in _CORNERS and c != (0.5, 0.5, 0.5)
)

CUE_MATCH_TOLERANCE = 0.2
_BACKGROUND_RANGE = (0.35, 0.65)


class AnnotationError(ValueError):
    """Raised for malformed annotation files."""


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attribute names; position j is fixed across labels, weights and prompts."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ValueError("schema needs at least one attribute")
        if any(not isinstance(n, str) or not n for n in names):
            raise ValueError("attribute names must be non-empty strings")
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")

    @property
    def num_attributes(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown attribute {name!r}; schema has {list(self.names)}") from None


@dataclass(frozen=True)
class LabeledSample:
    """One image plus its binary attribute vector."""

    id: str
    image: np.ndarray  # (H, W, 3) float32
    labels: np.ndarray  # (A,) int8, values in {0, 1}

    def __post_init__(self):
        image = np.ascontiguousarray(self.image, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int8)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"sample {self.id!r}: image must be (H, W, 3), got {image.shape}")
        if labels.ndim != 1:
            raise ValueError(f"sample {self.id!r}: labels must be a vector, got shape {labels.shape}")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError(f"sample {self.id!r}: labels must be 0/1")
        image.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class ImbalanceWeights:
    """Per-attribute loss weights from the training positive ratio r_j.

    Positive ground truth is weighted exp(1 - r_j), negative exp(r_j), so
    rarer positives weigh more.
    """

    positive_ratio: np.ndarray  # (A,), in [0, 1]

    def __post_init__(self):
        r = np.ascontiguousarray(self.positive_ratio, dtype=np.float64)
        if r.ndim != 1 or ((r < 0) | (r > 1)).any():
            raise ValueError("positive_ratio must be a vector with entries in [0, 1]")
        r.flags.writeable = False
        object.__setattr__(self, "positive_ratio", r)

    @property
    def w(self) -> np.ndarray:
        """Positive-case weight vector exp(1 - r)."""
        return np.exp(1.0 - self.positive_ratio)

    @property
    def negative_w(self) -> np.ndarray:
        return np.exp(self.positive_ratio)

    def select(self, labels: np.ndarray) -> np.ndarray:
        """Per-entry weight: w[j] where labels==1, negative_w[j] elsewhere."""
        labels = np.asarray(labels)
        return np.where(labels == 1, self.w, self.negative_w)


def compute_imbalance_weights(
    samples: Sequence[LabeledSample], schema: AttributeSchema
) -> ImbalanceWeights:
    if not samples:
        raise ValueError("cannot compute imbalance weights from an empty sample set")
    labels = np.stack([s.labels for s in samples]).astype(np.float64)
    if labels.shape[1] != schema.num_attributes:
        raise ValueError(
            f"label width {labels.shape[1]} does not match schema ({schema.num_attributes})"
        )
    return ImbalanceWeights(positive_ratio=labels.mean(axis=0))


def _load_image(
    path: Path,
    image_hw: tuple[int, int] | None,
    pixel_mean: Sequence[float] | None,
    pixel_std: Sequence[float] | None,
) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("RGB")
        if image_hw is not None:
            h, w = image_hw
            img = img.resize((w, h), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    if pixel_mean is not None:
        arr = arr - np.asarray(pixel_mean, dtype=np.float32)
    if pixel_std is not None:
        arr = arr / np.asarray(pixel_std, dtype=np.float32)
    return arr


def load_annotations(
    path: str | Path,
    split: str,
    image_hw: tuple[int, int] | None = None,
    pixel_mean: Sequence[float] | None = None,
    pixel_std: Sequence[float] | None = None,
) -> tuple[AttributeSchema, list[LabeledSample]]:
    """Read an annotation file, returning the schema and the samples of one split.

    Images are loaded eagerly, resized to ``image_hw`` when given, and scaled
    to [0, 1] (minus optional mean / std). Sample order follows file order.
    """
    if split not in SPLITS:
        raise AnnotationError(f"unknown split {split!r}; expected one of {SPLITS}")
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#attributes\t"):
        raise AnnotationError(f"{path}: first line must be '#attributes<TAB>...'")
    names = lines[0].split("\t")[1:]
    schema = AttributeSchema(tuple(names))

    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise AnnotationError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
        relpath, tag, label_field = fields
        if tag not in SPLITS:
            raise AnnotationError(f"{path}:{lineno}: unknown split tag {tag!r}")
        bits = label_field.split()
        if any(b not in ("0", "1") for b in bits):
            raise AnnotationError(f"{path}:{lineno}: labels must be space-separated 0/1 values")
        if len(bits) != schema.num_attributes:
            raise AnnotationError(
                f"sample {relpath!r}: {len(bits)} labels but schema has "
                f"{schema.num_attributes} attributes"
            )
        if tag != split:
            continue
        image = _load_image(path.parent / relpath, image_hw, pixel_mean, pixel_std)
        samples.append(
            LabeledSample(id=relpath, image=image, labels=np.array([int(b) for b in bits], dtype=np.int8))
        )
    return schema, samples


def write_annotations(
    path: str | Path,
    schema: AttributeSchema,
    samples_by_split: Mapping[str, Sequence[LabeledSample]],
) -> None:
    """Write an annotation file plus its PNG images under ``images/``.

    Labels and schema round-trip exactly through :func:`load_annotations`;
    pixel values are quantized to 8 bit.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image_dir = path.parent / "images"
    image_dir.mkdir(exist_ok=True)

    lines = ["#attributes\t" + "\t".join(schema.names)]
    for split, samples in samples_by_split.items():
        if split not in SPLITS:
            raise AnnotationError(f"unknown split {split!r}; expected one of {SPLITS}")
        for sample in samples:
            if sample.labels.shape[0] != schema.num_attributes:
                raise AnnotationError(
                    f"sample {sample.id!r}: label width {sample.labels.shape[0]} "
                    f"does not match schema ({schema.num_attributes})"
                )
            relpath = f"images/{sample.id}.png"
            pixels = np.clip(np.round(sample.image * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(pixels).save(path.parent / relpath)
            lines.append(f"{relpath}\t{split}\t" + " ".join(str(int(b)) for b in sample.labels))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _place_rect(
    rng: np.random.Generator,
    height: int,
    width: int,
    extent: tuple[int, int],
    occupied: list[tuple[int, int, int, int]],
    attempts: int = 500,
) -> tuple[int, int, int, int]:
    lo, hi = extent
    for _ in range(attempts):
        rh = int(rng.integers(lo, hi + 1))
        rw = int(rng.integers(lo, hi + 1))
        r0 = int(rng.integers(0, height - rh + 1))
        c0 = int(rng.integers(0, width - rw + 1))
        box = (r0, r0 + rh, c0, c0 + rw)
        clear = all(
            box[1] + 1 <= o[0] or o[1] + 1 <= box[0] or box[3] + 1 <= o[2] or o[3] + 1 <= box[2]
            for o in occupied
        )
        if clear:
            occupied.append(box)
            return box
    raise ValueError(
        f"image {height}x{width} too small to place {len(occupied) + 1} distinct cues "
        f"of extent {extent}"
    )


def generate_synthetic_dataset(
    num_attributes: int,
    num_samples: int,
    image_hw: tuple[int, int] = (48, 48),
    seed: int = 0,
    cue_extent: tuple[int, int] = (8, 13),
    distractors: int = 0,
) -> tuple[AttributeSchema, list[LabeledSample]]:
    """Render a desk-scale dataset where attribute j is a colored rectangle.

    Rectangles land at per-sample random positions (never fixed bands), on a
    gray-noise background. Labels record which cues were rendered, so a
    color-threshold scan recovers them exactly. Deterministic under ``seed``.
    """
    if num_attributes < 1 or num_samples < 1:
        raise ValueError("need num_attributes >= 1 and num_samples >= 1")
    if num_attributes > len(CUE_PALETTE):
        raise ValueError(f"at most {len(CUE_PALETTE)} attributes supported, got {num_attributes}")
    height, width = image_hw
    if height < cue_extent[1] or width < cue_extent[1]:
        raise ValueError(f"image {height}x{width} smaller than max cue extent {cue_extent[1]}")

    rng = np.random.default_rng(seed)
    schema = AttributeSchema(tuple(f"attr{j:02d}" for j in range(num_attributes)))
    lo, hi = _BACKGROUND_RANGE

    samples = []
    for i in range(num_samples):
        labels = rng.integers(0, 2, size=num_attributes).astype(np.int8)
        gray = rng.uniform(lo, hi, size=(height, width, 1)).astype(np.float32)
        image = np.repeat(gray, 3, axis=2)
        occupied: list[tuple[int, int, int, int]] = []
        for j in range(num_attributes):
            if labels[j]:
                r0, r1, c0, c1 = _place_rect(rng, height, width, cue_extent, occupied)
                image[r0:r1, c0:c1] = CUE_PALETTE[j]
        for _ in range(distractors):
            r0, r1, c0, c1 = _place_rect(rng, height, width, cue_extent, occupied)
            # off-palette color: channels in {0.25, 0.75}, >= 0.25 from any cue color
            image[r0:r1, c0:c1] = rng.choice((0.25, 0.75), size=3)
        samples.append(LabeledSample(id=f"synth{i:05d}", image=image, labels=labels))
    return schema, samples


def detect_cue_labels(image: np.ndarray, num_attributes: int) -> np.ndarray:
    """Brute-force cue scan: attribute j is present iff some pixel matches its color."""
    labels = np.zeros(num_attributes, dtype=np.int8)
    for j in range(num_attributes):
        if _cue_mask(image, j).any():
            labels[j] = 1
    return labels


def detect_cue_box(image: np.ndarray, attribute_index: int) -> tuple[int, int, int, int] | None:
    """Bounding box (r0, r1, c0, c1) of pixels matching attribute's cue color, or None."""
    mask = _cue_mask(image, attribute_index)
    if not mask.any():
        return None
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def _cue_mask(image: np.ndarray, attribute_index: int) -> np.ndarray:
    color = np.asarray(CUE_PALETTE[attribute_index], dtype=np.float32)
    return (np.abs(image - color) < CUE_MATCH_TOLERANCE).all(axis=-1)


def split_synthetic(
    samples: Sequence[LabeledSample],
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
) -> dict[str, list[LabeledSample]]:
    """Deterministic contiguous train/val/test split by generated order."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n = len(samples)
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return {
        "train": list(samples[:n_train]),
        "val": list(samples[n_train : n_train + n_val]),
        "test": list(samples[n_train + n_val :]),
    }
