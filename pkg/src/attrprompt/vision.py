"""Vision transformer with per-attribute prompt tokens, shared-space projection,
and the per-attribute prediction head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .transformer import TransformerBlock, key_exclusion_mask

PROMPT_INIT_STD = 0.02


@dataclass(frozen=True)
class VisualConfig:
    image_hw: tuple[int, int] = (256, 192)
    patch_size: int = 16
    width: int = 768
    depth: int = 12
    heads: int = 12
    shared_dim: int = 512
    mlp_ratio: float = 4.0
    # apply the encoder's final layer norm to prompt tokens before projection,
    # same treatment as the class token
    final_norm_prompts: bool = True
    # None: one independent affine map per attribute; int: shared MLP with that
    # hidden width applied to each attribute token
    head_hidden: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "image_hw", tuple(self.image_hw))
        h, w = self.image_hw
        if self.depth < 1:
            raise ValueError("encoder depth must be >= 1")
        if self.width < 1 or self.shared_dim < 1:
            raise ValueError("width and shared_dim must be >= 1")
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(
                f"image {h}x{w} not divisible by patch size {self.patch_size}"
            )
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")

    @property
    def patch_count(self) -> int:
        h, w = self.image_hw
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def patch_grid(self) -> tuple[int, int]:
        h, w = self.image_hw
        return h // self.patch_size, w // self.patch_size


@dataclass
class VisualEncoderOutput:
    """Final-layer token partitions plus (optionally) retained attention maps."""

    class_token: torch.Tensor  # (B, width) or (width,)
    patch_tokens: torch.Tensor  # (B, P, width) or (P, width)
    prompt_tokens: torch.Tensor | None  # (B, A, width) or (A, width)
    attention_maps: list[torch.Tensor] | None  # per block, (B, heads, T, T)


class AttributeHead(nn.Module):
    """Prediction head where logit j reads only the token in row j.

    Default is one affine map per attribute; ``hidden`` switches to a shared
    two-layer MLP applied to each row (still block-diagonal across attributes).
    """

    def __init__(self, num_attributes: int, width: int, hidden: int | None = None):
        super().__init__()
        self.num_attributes = num_attributes
        self.hidden = hidden
        if hidden is None:
            self.weight = nn.Parameter(torch.empty(num_attributes, width))
            self.bias = nn.Parameter(torch.zeros(num_attributes))
            nn.init.normal_(self.weight, std=PROMPT_INIT_STD)
        else:
            self.mlp = nn.Sequential(
                nn.Linear(width, hidden), nn.GELU(), nn.Linear(hidden, 1)
            )

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-2] != self.num_attributes:
            raise ValueError(
                f"head expects {self.num_attributes} attribute rows, got {tokens.shape[-2]}"
            )
        if self.hidden is None:
            return (tokens * self.weight).sum(dim=-1) + self.bias
        return self.mlp(tokens).squeeze(-1)


class VisualEncoder(nn.Module):
    """ViT whose token stream is [class, patches, attribute prompts].

    Positional embeddings cover only the class and patch positions; prompt
    tokens are unordered attribute slots. Prompt rows start as copies of the
    class token so a pretrained-class-token load seeds them the same way.
    """

    def __init__(self, config: VisualConfig, num_attributes: int):
        super().__init__()
        if num_attributes < 1:
            raise ValueError("need at least one attribute")
        self.config = config
        self.num_attributes = num_attributes
        self.patch_embed = nn.Conv2d(
            3, config.width, kernel_size=config.patch_size, stride=config.patch_size, bias=False
        )
        self.class_token = nn.Parameter(torch.empty(config.width))
        nn.init.normal_(self.class_token, std=PROMPT_INIT_STD)
        self.pos_embedding = nn.Parameter(
            torch.empty(1 + config.patch_count, config.width)
        )
        nn.init.normal_(self.pos_embedding, std=PROMPT_INIT_STD)
        self.prompt_tokens = nn.Parameter(
            self.class_token.detach().clone().expand(num_attributes, -1).contiguous()
        )
        self.blocks = nn.ModuleList(
            TransformerBlock(config.width, config.heads, config.mlp_ratio)
            for _ in range(config.depth)
        )
        self.ln_final = nn.LayerNorm(config.width)
        self.proj = nn.Linear(config.width, config.shared_dim, bias=False)
        self.head = AttributeHead(num_attributes, config.width, config.head_hidden)

    def forward(
        self,
        images: torch.Tensor,
        use_prompts: bool = True,
        mask_prompts: bool = False,
        keep_attention: bool = False,
    ) -> VisualEncoderOutput:
        """Run (B, 3, H, W) images through all blocks with full bidirectional attention.

        ``mask_prompts`` hides prompt tokens from every class/patch query, so
        those positions reproduce a prompt-free forward pass exactly.
        """
        h, w = self.config.image_hw
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected images of shape (B, 3, H, W), got {tuple(images.shape)}")
        if images.shape[2] != h:
            raise ValueError(f"image height {images.shape[2]} != configured {h}")
        if images.shape[3] != w:
            raise ValueError(f"image width {images.shape[3]} != configured {w}")

        batch = images.shape[0]
        patches = self.patch_embed(images).flatten(2).transpose(1, 2)  # (B, P, width)
        tokens = torch.cat(
            [self.class_token.expand(batch, 1, -1), patches], dim=1
        ) + self.pos_embedding
        num_base = tokens.shape[1]
        if use_prompts:
            if self.prompt_tokens.shape[0] != self.num_attributes:
                raise ValueError(
                    f"prompt rows {self.prompt_tokens.shape[0]} != attributes {self.num_attributes}"
                )
            tokens = torch.cat([tokens, self.prompt_tokens.expand(batch, -1, -1)], dim=1)

        attn_mask = None
        if use_prompts and mask_prompts:
            attn_mask = key_exclusion_mask(
                tokens.shape[1], num_base, num_base, tokens.dtype, tokens.device
            )

        maps: list[torch.Tensor] | None = [] if keep_attention else None
        for block in self.blocks:
            tokens, weights = block(tokens, attn_mask)
            if maps is not None:
                maps.append(weights)

        normed = self.ln_final(tokens[:, :num_base])
        prompts_out = None
        if use_prompts:
            prompts_out = tokens[:, num_base:]
            if self.config.final_norm_prompts:
                prompts_out = self.ln_final(prompts_out)
        return VisualEncoderOutput(
            class_token=normed[:, 0],
            patch_tokens=normed[:, 1:],
            prompt_tokens=prompts_out,
            attention_maps=maps,
        )

    def project(self, prompt_tokens: torch.Tensor) -> torch.Tensor:
        """Map final prompt tokens into the shared embedding space (bias-free)."""
        if not torch.isfinite(prompt_tokens).all():
            raise ValueError("non-finite prompt tokens")
        return self.proj(prompt_tokens)

    def predict(self, prompt_tokens: torch.Tensor) -> torch.Tensor:
        """Per-attribute logits from final prompt tokens."""
        return self.head(prompt_tokens)

    def predict_from_class_token(self, class_token: torch.Tensor) -> torch.Tensor:
        """Frozen-probe variant: every attribute head row reads the class token."""
        expanded = class_token.unsqueeze(-2).expand(
            *class_token.shape[:-1], self.num_attributes, class_token.shape[-1]
        )
        return self.head(expanded)


def to_image_tensor(
    images: np.ndarray | Sequence[np.ndarray] | torch.Tensor,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Convert (H, W, 3) arrays, stacks or lists of them to a (B, 3, H, W) tensor."""
    if isinstance(images, torch.Tensor):
        t = images
    else:
        arr = np.stack(list(images)) if not isinstance(images, np.ndarray) else images
        arr = np.ascontiguousarray(arr)
        if not arr.flags.writeable:  # dataset arrays are read-only
            arr = arr.copy()
        t = torch.from_numpy(arr)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4:
        raise ValueError(f"cannot interpret shape {tuple(t.shape)} as an image batch")
    if t.shape[-1] == 3:
        t = t.permute(0, 3, 1, 2)
    return t.to(dtype).contiguous()


def forward_visual(
    encoder: VisualEncoder, image: np.ndarray | torch.Tensor, **kwargs
) -> VisualEncoderOutput:
    """Single-image convenience wrapper: numpy (H, W, 3) in, unbatched output out."""
    kwargs.setdefault("keep_attention", True)
    dtype = next(encoder.parameters()).dtype
    out = encoder(to_image_tensor(image, dtype=dtype), **kwargs)
    return VisualEncoderOutput(
        class_token=out.class_token[0],
        patch_tokens=out.patch_tokens[0],
        prompt_tokens=None if out.prompt_tokens is None else out.prompt_tokens[0],
        attention_maps=None if out.attention_maps is None else [m[0] for m in out.attention_maps],
    )
