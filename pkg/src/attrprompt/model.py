"""Bundles the visual encoder, frozen text encoder, prompt bank and temperature."""

from __future__ import annotations

import math

import torch
from torch import nn

from .data import AttributeSchema
from .losses import AlignmentOutput, aligned_similarity
from .text import TextConfig, TextEncoder, TextPromptBank
from .vision import VisualConfig, VisualEncoder, VisualEncoderOutput

DEFAULT_TEMPERATURE = 0.01


class AttributeModel(nn.Module):
    """Dual-encoder attribute recognizer.

    The text tower (encoder + projection) is frozen; the prompt bank, visual
    encoder, projection and head are the trainable surface. ``include_text=False``
    builds the text-free inference variant, which never touches text weights.
    """

    def __init__(
        self,
        schema: AttributeSchema,
        visual_config: VisualConfig,
        text_config: TextConfig | None = None,
        temperature: float = DEFAULT_TEMPERATURE,
        learnable_temperature: bool = False,
        include_text: bool = True,
        warm_start_text: bool = False,
    ):
        super().__init__()
        if temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {temperature}")
        self.schema = schema
        self.visual = VisualEncoder(visual_config, schema.num_attributes)
        self.text: TextEncoder | None = None
        self.bank: TextPromptBank | None = None
        if include_text:
            text_config = text_config or TextConfig(shared_dim=visual_config.shared_dim)
            if text_config.shared_dim != visual_config.shared_dim:
                raise ValueError(
                    f"shared embedding widths differ: visual {visual_config.shared_dim} "
                    f"vs text {text_config.shared_dim}"
                )
            self.text = TextEncoder(text_config)
            self.bank = TextPromptBank(schema.num_attributes, text_config)
            if warm_start_text:
                self.bank.warm_start(schema, self.text)
        self.log_temperature = nn.Parameter(
            torch.tensor(math.log(temperature)), requires_grad=learnable_temperature
        )

    @property
    def temperature(self) -> float:
        return float(self.log_temperature.exp())

    def encode_images(self, images: torch.Tensor, **kwargs) -> VisualEncoderOutput:
        return self.visual(images, **kwargs)

    def text_features(self) -> torch.Tensor:
        """Input-independent text attribute features (A, shared_dim)."""
        if self.text is None or self.bank is None:
            raise RuntimeError("model was built without its text branch")
        return self.text.encode_bank(self.bank)

    def align(
        self, prompt_tokens: torch.Tensor, text_features: torch.Tensor
    ) -> AlignmentOutput:
        """Diagonal alignment between projected prompt tokens and text features."""
        visual_features = self.visual.project(prompt_tokens)
        return aligned_similarity(visual_features, text_features, self.temperature)

    def predict_probabilities(self, images: torch.Tensor) -> torch.Tensor:
        """Text-free path: sigmoid of the per-attribute head logits."""
        out = self.visual(images)
        return torch.sigmoid(self.visual.predict(out.prompt_tokens))
