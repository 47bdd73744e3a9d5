"""Evaluation metrics: label-based mean accuracy and instance-based F1 companions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricReport:
    mA: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    tpr: np.ndarray  # (A,), NaN where undefined
    tnr: np.ndarray  # (A,), NaN where undefined
    skipped_attributes: tuple[int, ...]
    skipped_samples: int


def _validate(preds: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"shape mismatch: preds {preds.shape} vs labels {labels.shape}")
    if preds.ndim == 1:
        preds = preds[:, None]
        labels = labels[:, None]
    if preds.ndim != 2:
        raise ValueError(f"expected (N, A) arrays, got ndim {preds.ndim}")
    for name, arr in (("preds", preds), ("labels", labels)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be binary 0/1")
    return preds.astype(np.int64), labels.astype(np.int64)


def attribute_rates(
    preds: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-attribute TPR and TNR (NaN where the class is absent) and a defined mask."""
    preds, labels = _validate(preds, labels)
    pos = labels.sum(axis=0)
    neg = (1 - labels).sum(axis=0)
    tp = (preds * labels).sum(axis=0)
    tn = ((1 - preds) * (1 - labels)).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        tpr = np.where(pos > 0, tp / np.maximum(pos, 1), np.nan)
        tnr = np.where(neg > 0, tn / np.maximum(neg, 1), np.nan)
    defined = (pos > 0) & (neg > 0)
    return tpr, tnr, defined


def mean_accuracy(preds: np.ndarray, labels: np.ndarray, degenerate: str = "skip") -> float:
    """Mean over attributes of (TPR + TNR) / 2.

    Attributes with no positives or no negatives have an undefined rate;
    ``degenerate="skip"`` drops them from the average (the reporting call
    sites surface which ones), ``"strict"`` raises instead.
    """
    tpr, tnr, defined = attribute_rates(preds, labels)
    if degenerate not in ("skip", "strict"):
        raise ValueError(f"unknown degenerate policy {degenerate!r}")
    if not defined.all() and degenerate == "strict":
        bad = np.flatnonzero(~defined).tolist()
        raise ValueError(f"attributes {bad} lack positives or negatives")
    if not defined.any():
        raise ValueError("no attribute has both positives and negatives")
    return float(((tpr[defined] + tnr[defined]) / 2.0).mean())


def instance_metrics(
    preds: np.ndarray, labels: np.ndarray, empty_union: str = "skip"
) -> tuple[float, float, float, float]:
    """Set-based (accuracy, precision, recall, F1), averaged over samples.

    Per sample: accuracy |P∩L|/|P∪L|, precision |P∩L|/|P|, recall |P∩L|/|L|,
    with 0/0 terms counted as 0. F1 is the harmonic mean of the averaged
    precision and recall. Samples with an empty P∪L are skipped by default
    (``empty_union="zero"`` keeps them as zero contributions).
    """
    if empty_union not in ("skip", "zero"):
        raise ValueError(f"unknown empty_union policy {empty_union!r}")
    preds, labels = _validate(preds, labels)
    inter = (preds & labels).sum(axis=1).astype(np.float64)
    union = (preds | labels).sum(axis=1).astype(np.float64)
    p_size = preds.sum(axis=1).astype(np.float64)
    l_size = labels.sum(axis=1).astype(np.float64)

    keep = union > 0 if empty_union == "skip" else np.ones(len(union), dtype=bool)
    if not keep.any():
        return 0.0, 0.0, 0.0, 0.0

    def _safe(num, den):
        return np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)

    accuracy = float(_safe(inter, union)[keep].mean())
    precision = float(_safe(inter, p_size)[keep].mean())
    recall = float(_safe(inter, l_size)[keep].mean())
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return accuracy, precision, recall, float(f1)


def compute_metrics(
    preds: np.ndarray,
    labels: np.ndarray,
    degenerate: str = "skip",
    empty_union: str = "skip",
) -> MetricReport:
    tpr, tnr, defined = attribute_rates(preds, labels)
    ma = mean_accuracy(preds, labels, degenerate=degenerate)
    accuracy, precision, recall, f1 = instance_metrics(preds, labels, empty_union=empty_union)
    preds2, labels2 = _validate(preds, labels)
    union = (preds2 | labels2).sum(axis=1)
    skipped_samples = int((union == 0).sum()) if empty_union == "skip" else 0
    return MetricReport(
        mA=ma,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        tpr=tpr,
        tnr=tnr,
        skipped_attributes=tuple(np.flatnonzero(~defined).tolist()),
        skipped_samples=skipped_samples,
    )
