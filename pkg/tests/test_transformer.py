"""Attention primitives shared by the visual and text towers."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from attrprompt.transformer import (
    MultiheadSelfAttention,
    TransformerBlock,
    causal_mask,
    key_exclusion_mask,
)


class TestMasks:
    def test_causal_structure(self):
        mask = causal_mask(4, torch.float32)
        for q in range(4):
            for k in range(4):
                if k <= q:
                    assert mask[q, k] == 0.0
                else:
                    assert torch.isinf(mask[q, k]) and mask[q, k] < 0

    def test_key_exclusion_blocks_only_early_queries(self):
        # 6 tokens, keys 4-5 hidden from queries 0-3; queries 4-5 unrestricted
        mask = key_exclusion_mask(6, excluded_from=4, query_limit=4, dtype=torch.float32)
        assert torch.isneginf(mask[0, 4]) and torch.isneginf(mask[3, 5])
        assert mask[0, 0] == 0.0 and mask[3, 3] == 0.0
        assert (mask[4:] == 0.0).all()


class TestAttention:
    def test_weights_are_row_stochastic(self):
        torch.manual_seed(0)
        attn = MultiheadSelfAttention(width=16, heads=4)
        x = torch.randn(2, 5, 16)
        out, weights = attn(x)
        assert out.shape == (2, 5, 16)
        assert weights.shape == (2, 4, 5, 5)
        np.testing.assert_allclose(weights.sum(dim=-1).detach().numpy(), 1.0, atol=1e-6)

    def test_causal_mask_zeroes_future_weights(self):
        torch.manual_seed(0)
        attn = MultiheadSelfAttention(width=16, heads=4)
        x = torch.randn(1, 4, 16)
        _, weights = attn(x, causal_mask(4, x.dtype))
        upper = torch.triu(torch.ones(4, 4), diagonal=1).bool()
        assert (weights[0, :, upper] == 0).all()

    def test_width_must_divide_heads(self):
        with pytest.raises(ValueError):
            MultiheadSelfAttention(width=10, heads=4)


class TestBlock:
    def test_residual_identity_when_branches_zeroed(self):
        torch.manual_seed(0)
        block = TransformerBlock(width=16, heads=4)
        with torch.no_grad():
            block.attn.proj.weight.zero_()
            block.attn.proj.bias.zero_()
            block.mlp[2].weight.zero_()
            block.mlp[2].bias.zero_()
        x = torch.randn(2, 5, 16)
        out, _ = block(x)
        np.testing.assert_allclose(out.detach().numpy(), x.numpy(), atol=1e-7)

    def test_pre_norm_attention_weights_scale_invariant(self):
        # attention reads ln1(x), so scaling the input by a positive constant
        # must not move the attention pattern
        torch.manual_seed(0)
        block = TransformerBlock(width=16, heads=4)
        x = torch.randn(1, 3, 16)
        with torch.no_grad():
            _, small = block(x)
            _, large = block(3 * x)
        np.testing.assert_allclose(small.numpy(), large.numpy(), atol=1e-5)
