"""Shared fixtures: tiny model configurations and small synthetic datasets.

Everything here is sized for single-core CI — widths of 16-32, depth 2,
images no larger than 48x48.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

from attrprompt.data import AttributeSchema, generate_synthetic_dataset
from attrprompt.model import AttributeModel
from attrprompt.text import TextConfig
from attrprompt.vision import VisualConfig


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def schema3() -> AttributeSchema:
    return AttributeSchema(("gender_female", "bag_backpack", "wear_hat"))


@pytest.fixture
def tiny_visual_config() -> VisualConfig:
    return VisualConfig(image_hw=(32, 32), patch_size=8, width=32, depth=2, heads=4, shared_dim=16)


@pytest.fixture
def tiny_text_config() -> TextConfig:
    return TextConfig(
        width=32, depth=2, heads=4, max_len=24, shared_dim=16, person_tokens=2, attribute_tokens=4
    )


@pytest.fixture
def tiny_model(schema3, tiny_visual_config, tiny_text_config) -> AttributeModel:
    torch.manual_seed(0)
    return AttributeModel(schema3, tiny_visual_config, tiny_text_config, temperature=0.02)


@pytest.fixture
def tiny_images(tiny_visual_config) -> torch.Tensor:
    g = torch.Generator().manual_seed(1)
    h, w = tiny_visual_config.image_hw
    return torch.rand((4, 3, h, w), generator=g)


@pytest.fixture(scope="session")
def small_synthetic():
    """40-sample, 3-attribute colored-cue dataset shared across fast tests."""
    return generate_synthetic_dataset(num_attributes=3, num_samples=40, image_hw=(32, 32), seed=5)


def random_binary(rng: np.random.Generator, n: int, a: int) -> np.ndarray:
    return rng.integers(0, 2, size=(n, a)).astype(np.int64)
