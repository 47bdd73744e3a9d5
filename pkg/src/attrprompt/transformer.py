"""Pre-norm transformer blocks shared by the visual and text encoders."""

from __future__ import annotations

import torch
from torch import nn


class MultiheadSelfAttention(nn.Module):
    """Standard multi-head self-attention that also returns per-head weights."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(
        self, x: torch.Tensor, attn_mask: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        b, t, w = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) * self.head_dim**-0.5
        if attn_mask is not None:
            scores = scores + attn_mask
        weights = scores.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, t, w)
        return self.proj(out), weights


class TransformerBlock(nn.Module):
    """Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, width: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(width * mlp_ratio)
        self.norm1 = nn.LayerNorm(width)
        self.attn = MultiheadSelfAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, hidden),
            nn.GELU(),
            nn.Linear(hidden, width),
        )

    def forward(
        self, x: torch.Tensor, attn_mask: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        attended, weights = self.attn(self.norm1(x), attn_mask)
        x = x + attended
        x = x + self.mlp(self.norm2(x))
        return x, weights


def causal_mask(length: int, dtype: torch.dtype, device=None) -> torch.Tensor:
    """Additive mask forbidding attention to later positions."""
    mask = torch.full((length, length), float("-inf"), dtype=dtype, device=device)
    return mask.triu(1)


def key_exclusion_mask(
    length: int, excluded_from: int, query_limit: int, dtype: torch.dtype, device=None
) -> torch.Tensor:
    """Additive mask hiding keys at positions >= ``excluded_from`` from queries < ``query_limit``."""
    mask = torch.zeros((length, length), dtype=dtype, device=device)
    mask[:query_limit, excluded_from:] = float("-inf")
    return mask
