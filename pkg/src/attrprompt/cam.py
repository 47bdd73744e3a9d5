"""Class activation maps for attribute prompts.

Default method is attention rollout restricted to the chosen attribute's
prompt row: head-averaged attention per block, blended with the identity for
the residual path, multiplied across blocks, then read out from the prompt
position to the patch positions. ``method="grad"`` switches to input-gradient
saliency of the attribute logit, average-pooled per patch.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from matplotlib import colormaps
from PIL import Image

from .checkpoint import Checkpoint, build_model_from_checkpoint
from .model import AttributeModel
from .vision import to_image_tensor


def attention_rollout(attention_maps: list[torch.Tensor]) -> torch.Tensor:
    """Combine per-block attention into token-to-token relevance.

    Each map is (heads, T, T) or (B, heads, T, T); heads are averaged, the
    identity is mixed in for the residual connection, rows renormalized, and
    blocks composed multiplicatively from the input upward.
    """
    if not attention_maps:
        raise ValueError("no attention maps to roll out")
    rollout = None
    for weights in attention_maps:
        attn = weights.mean(dim=-3)  # average heads
        eye = torch.eye(attn.shape[-1], dtype=attn.dtype, device=attn.device)
        attn = 0.5 * attn + 0.5 * eye
        attn = attn / attn.sum(dim=-1, keepdim=True)
        rollout = attn if rollout is None else attn @ rollout
    return rollout


def cam_patch_relevance(
    model: AttributeModel,
    image: np.ndarray | torch.Tensor,
    attribute_index: int,
    method: str = "rollout",
) -> np.ndarray:
    """Per-patch relevance grid (gh, gw) of one attribute's prompt token."""
    config = model.visual.config
    num_patches = config.patch_count
    dtype = next(model.parameters()).dtype
    batch = to_image_tensor(image, dtype=dtype)

    if method == "rollout":
        with torch.no_grad():
            out = model.visual(batch, keep_attention=True)
        rollout = attention_rollout(out.attention_maps)[0]
        prompt_position = 1 + num_patches + attribute_index
        relevance = rollout[prompt_position, 1 : 1 + num_patches]
        return relevance.detach().cpu().numpy().reshape(config.patch_grid)
    if method == "grad":
        batch = batch.clone().requires_grad_(True)
        out = model.visual(batch)
        logits = model.visual.predict(out.prompt_tokens)
        grads = torch.autograd.grad(logits[0, attribute_index], batch)[0][0]
        saliency = grads.abs().sum(dim=0)  # (H, W)
        pooled = F.avg_pool2d(saliency[None, None], config.patch_size)[0, 0]
        return pooled.detach().cpu().numpy()
    raise ValueError(f"unknown CAM method {method!r}")


def cam_heatmap(
    model: AttributeModel,
    image: np.ndarray | torch.Tensor,
    attribute_index: int,
    method: str = "rollout",
) -> tuple[np.ndarray, np.ndarray]:
    """(H, W) heatmap in [0, 1] plus the raw patch-relevance grid."""
    grid = cam_patch_relevance(model, image, attribute_index, method=method)
    h, w = model.visual.config.image_hw
    heat = F.interpolate(
        torch.from_numpy(grid)[None, None].float(), size=(h, w),
        mode="bilinear", align_corners=False,
    )[0, 0].numpy()
    lo, hi = heat.min(), heat.max()
    heat = (heat - lo) / (hi - lo) if hi > lo else np.full_like(heat, 0.5)
    return heat, grid


def argmax_patch(grid: np.ndarray, patch_size: int) -> tuple[int, int, int, int]:
    """Pixel box (r0, r1, c0, c1) of the highest-relevance patch."""
    row, col = np.unravel_index(int(grid.argmax()), grid.shape)
    return (
        row * patch_size,
        (row + 1) * patch_size,
        col * patch_size,
        (col + 1) * patch_size,
    )


def render_overlay(image: np.ndarray, heatmap: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend a jet-colored heatmap (red high, blue low) over the image; uint8 out."""
    colored = colormaps["jet"](heatmap)[..., :3]
    base = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    blended = (1 - alpha) * base + alpha * colored
    return np.clip(np.round(blended * 255.0), 0, 255).astype(np.uint8)


def emit_cam(
    checkpoint: Checkpoint | AttributeModel,
    image: np.ndarray | str | Path,
    attribute_name: str,
    out_path: str | Path,
    method: str = "rollout",
) -> np.ndarray:
    """Write the heatmap overlay for one attribute to ``out_path``; returns the heatmap.

    ``image`` may be an (H, W, 3) array in [0, 1] or a path to an image file,
    which is resized to the model's input size.
    """
    if isinstance(checkpoint, AttributeModel):
        model = checkpoint
    else:
        model = build_model_from_checkpoint(checkpoint, head="ffn")
    if isinstance(image, (str, Path)):
        from .data import _load_image

        image = _load_image(Path(image), model.visual.config.image_hw, None, None)
    index = model.schema.index(attribute_name)
    heat, _ = cam_heatmap(model, image, index, method=method)
    overlay = render_overlay(np.asarray(image), heat)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(overlay).save(out_path)
    return heat
