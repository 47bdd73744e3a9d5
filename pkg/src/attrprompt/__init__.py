"""Multi-attribute recognition with learnable visual prompts and text alignment.

A vision transformer carries one learnable prompt token per attribute; a
frozen text transformer encodes a shared person context plus per-attribute
contexts. Training aligns the paired visual/text features and fits a light
prediction head, after which inference is text-free.
"""

from .data import (
    AttributeSchema,
    ImbalanceWeights,
    LabeledSample,
    compute_imbalance_weights,
    generate_synthetic_dataset,
    load_annotations,
    write_annotations,
)
from .losses import (
    LossSchedule,
    Phase,
    aligned_similarity,
    alignment_loss,
    combined_loss,
    prediction_loss,
)
from .model import AttributeModel
from .vision import VisualConfig, VisualEncoder
from .text import TextConfig, TextEncoder, TextPromptBank
from .trainer import TrainConfig, train
from .metrics import compute_metrics
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .inference import infer

__all__ = [
    "AttributeModel",
    "AttributeSchema",
    "Checkpoint",
    "ImbalanceWeights",
    "LabeledSample",
    "LossSchedule",
    "Phase",
    "TextConfig",
    "TextEncoder",
    "TextPromptBank",
    "TrainConfig",
    "VisualConfig",
    "VisualEncoder",
    "aligned_similarity",
    "alignment_loss",
    "combined_loss",
    "compute_imbalance_weights",
    "compute_metrics",
    "generate_synthetic_dataset",
    "infer",
    "load_annotations",
    "load_checkpoint",
    "prediction_loss",
    "save_checkpoint",
    "train",
    "write_annotations",
]

__version__ = "0.1.0"
