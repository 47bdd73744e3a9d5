"""Learnable person/attribute context bank and the frozen text encoder.

Each attribute's token sequence is [SOS, person context, attribute context,
EOS, padding]; the person block is shared across attributes, the attribute
block replaces the class name. The encoder is causal, frozen, and summarizes
each sequence at its EOS position before projecting to the shared space.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .data import AttributeSchema
from .transformer import TransformerBlock, causal_mask

CONTEXT_INIT_STD = 0.02

PAD_ID = 0
SOS_ID = 1
EOS_ID = 2
_BYTE_OFFSET = 3
VOCAB_SIZE = _BYTE_OFFSET + 256  # specials + byte-level tokens


@dataclass(frozen=True)
class TextConfig:
    width: int = 512
    depth: int = 12
    heads: int = 8
    max_len: int = 77
    shared_dim: int = 512
    person_tokens: int = 4
    attribute_tokens: int = 16
    mlp_ratio: float = 4.0
    sos_id: int = SOS_ID
    eos_id: int = EOS_ID
    pad_id: int = PAD_ID

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("text encoder depth must be >= 1")
        if self.person_tokens < 0 or self.attribute_tokens < 1:
            raise ValueError("need person_tokens >= 0 and attribute_tokens >= 1")
        if self.person_tokens + self.attribute_tokens + 2 > self.max_len:
            raise ValueError(
                f"person ({self.person_tokens}) + attribute ({self.attribute_tokens}) context "
                f"+ SOS/EOS exceed max sequence length {self.max_len}"
            )
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")

    @property
    def eos_index(self) -> int:
        return self.person_tokens + self.attribute_tokens + 1


def tokenize_name(name: str, length: int, pad_id: int = PAD_ID) -> list[int]:
    """Byte-level token ids for an attribute name, truncated / padded to ``length``."""
    ids = [_BYTE_OFFSET + b for b in name.encode("utf-8")][:length]
    return ids + [pad_id] * (length - len(ids))


class TextPromptBank(nn.Module):
    """All learnable text parameters: shared person context + per-attribute contexts."""

    def __init__(self, num_attributes: int, config: TextConfig):
        super().__init__()
        self.config = config
        self.person_context = nn.Parameter(
            torch.randn(config.person_tokens, config.width) * CONTEXT_INIT_STD
        )
        self.attribute_contexts = nn.Parameter(
            torch.randn(num_attributes, config.attribute_tokens, config.width)
            * CONTEXT_INIT_STD
        )

    @property
    def num_attributes(self) -> int:
        return self.attribute_contexts.shape[0]

    @torch.no_grad()
    def warm_start(self, schema: AttributeSchema, encoder: "TextEncoder") -> None:
        """Seed each attribute context from its embedded (tokenized) class name."""
        for j, name in enumerate(schema.names):
            ids = torch.tensor(tokenize_name(name, self.config.attribute_tokens))
            self.attribute_contexts[j] = encoder.token_embedding(ids)


class TextEncoder(nn.Module):
    """Frozen causal transformer; gradients flow through it to the prompt bank."""

    def __init__(self, config: TextConfig, vocab_size: int = VOCAB_SIZE):
        super().__init__()
        self.config = config
        self.token_embedding = nn.Embedding(vocab_size, config.width)
        nn.init.normal_(self.token_embedding.weight, std=CONTEXT_INIT_STD)
        self.pos_embedding = nn.Parameter(torch.empty(config.max_len, config.width))
        nn.init.normal_(self.pos_embedding, std=CONTEXT_INIT_STD)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.width, config.heads, config.mlp_ratio)
            for _ in range(config.depth)
        )
        self.ln_final = nn.LayerNorm(config.width)
        self.proj = nn.Linear(config.width, config.shared_dim, bias=False)
        self.requires_grad_(False)

    def assemble_sequences(self, bank: TextPromptBank) -> tuple[torch.Tensor, int]:
        """Embed one sequence per attribute: (A, L, width) plus the shared EOS index."""
        cfg = self.config
        g = bank.person_context.shape[0]
        s = bank.attribute_contexts.shape[1]
        if g + s + 2 > cfg.max_len:
            raise ValueError(
                f"bank contexts ({g} + {s}) plus SOS/EOS exceed max length {cfg.max_len}"
            )
        num_attributes = bank.num_attributes
        dtype = bank.person_context.dtype
        sos = self.token_embedding.weight[cfg.sos_id].to(dtype)
        eos = self.token_embedding.weight[cfg.eos_id].to(dtype)
        pad = self.token_embedding.weight[cfg.pad_id].to(dtype)

        pieces = [
            sos.expand(num_attributes, 1, -1),
            bank.person_context.expand(num_attributes, g, -1),
            bank.attribute_contexts,
            eos.expand(num_attributes, 1, -1),
        ]
        tail = cfg.max_len - (g + s + 2)
        if tail:
            pieces.append(pad.expand(num_attributes, tail, -1))
        return torch.cat(pieces, dim=1), g + s + 1

    def encode(self, sequences: torch.Tensor, eos_index: int) -> torch.Tensor:
        """Causal forward over assembled sequences; EOS tokens projected to shared space."""
        if sequences.ndim != 3 or sequences.shape[1] != self.config.max_len:
            raise ValueError(
                f"expected (A, {self.config.max_len}, width) sequences, got {tuple(sequences.shape)}"
            )
        x = sequences + self.pos_embedding.to(sequences.dtype)
        mask = causal_mask(x.shape[1], x.dtype, x.device)
        for block in self.blocks:
            x, _ = block(x, mask)
        summary = self.ln_final(x[:, eos_index])
        return self.proj(summary)

    def encode_bank(self, bank: TextPromptBank) -> torch.Tensor:
        """Text attribute features (A, shared_dim) for the bank's current parameters."""
        sequences, eos_index = self.assemble_sequences(bank)
        return self.encode(sequences, eos_index)
