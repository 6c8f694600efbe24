"""
Transformer Layers
------------------
Pre-norm transformer building blocks shared by the image encoder, the
unimodal text encoder and the multimodal decoder.
"""

import torch
import torch.nn as nn

from coca_cxr.errors import ShapeMismatchError
from coca_cxr.tensor_ops import check_finite, layer_norm, scaled_dot_attention


class LayerNorm(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias)


class MultiHeadAttention(nn.Module):
    """Projections W_Q, W_K, W_V, W_O around `scaled_dot_attention`."""

    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(dim, dim)
        self.w_v = nn.Linear(dim, dim)
        self.w_o = nn.Linear(dim, dim)

    def forward(self, queries, keys_values, additive_mask=None):
        q = self.w_q(queries)
        k = self.w_k(keys_values)
        v = self.w_v(keys_values)
        out = scaled_dot_attention(q, k, v, additive_mask, num_heads=self.num_heads)
        return self.w_o(out)


class FeedForward(nn.Module):
    def __init__(self, dim, mlp_ratio=4):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim),
            nn.GELU(),
            nn.Linear(mlp_ratio * dim, dim),
        )

    def forward(self, x):
        return self.net(x)


class TransformerBlock(nn.Module):
    """
    Pre-norm block: x + SA(LN(x)), optionally x + CA(LN(x), memory), then x + FFN(LN(x)).
    """

    def __init__(self, dim, num_heads, mlp_ratio=4, cross_attention=False):
        super().__init__()
        self.norm_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, num_heads)
        if cross_attention:
            self.norm_cross = LayerNorm(dim)
            self.cross_attn = MultiHeadAttention(dim, num_heads)
        else:
            self.cross_attn = None
        self.norm_ffn = LayerNorm(dim)
        self.ffn = FeedForward(dim, mlp_ratio)

    def forward(self, x, self_mask=None, memory=None):
        h = self.norm_self(x)
        x = x + self.self_attn(h, h, self_mask)
        if self.cross_attn is not None:
            if memory is None:
                raise ShapeMismatchError("cross-attention block called without memory")
            x = x + self.cross_attn(self.norm_cross(x), memory)
        x = x + self.ffn(self.norm_ffn(x))
        return check_finite(x, "transformer block output")


class PatchEmbedding(nn.Module):
    """Non-overlapping patch projection to a row-major flattened token grid."""

    def __init__(self, patch_size, dim, channels=1):
        super().__init__()
        self.proj = nn.Conv2d(channels, dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, images):
        return self.proj(images).flatten(2).transpose(1, 2)


def causal_mask(length, dtype=torch.float32, device=None):
    """Additive (length, length) mask: 0 on and below the diagonal, -inf above."""
    mask = torch.full((length, length), float("-inf"), dtype=dtype, device=device)
    return torch.triu(mask, diagonal=1)
