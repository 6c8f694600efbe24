"""
Regional Cross-Attention
------------------------
Each current-image token attends only to prior-image tokens inside a w x w
window centered on the same grid position (clamped at the grid edges).
The window is realized as an additive -inf logit mask, so masked keys leave
the softmax support entirely.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from coca_cxr.errors import ConfigurationError, ShapeMismatchError
from coca_cxr.model.layers import FeedForward, LayerNorm, MultiHeadAttention
from coca_cxr.tensor_ops import check_finite, grid_side


@dataclass(frozen=True)
class RegionalMask:
    grid_side: int
    window: int
    allowed: np.ndarray = field(repr=False)  # (G*G, G*G) bool, [query, key]

    def support(self, query):
        """Row-major indices of the prior tokens visible to `query`."""
        return np.flatnonzero(self.allowed[query])

    def support_sizes(self):
        return self.allowed.sum(axis=1)

    def additive(self, dtype=torch.float32, device=None):
        mask = torch.zeros(self.allowed.shape, dtype=dtype, device=device)
        blocked = torch.from_numpy(~self.allowed).to(device=device)
        return mask.masked_fill(blocked, float("-inf"))


def build_regional_mask(grid_side, window):
    if window % 2 == 0:
        raise ConfigurationError(f"window must be odd, got {window}")
    if grid_side < 1 or window < 1:
        raise ConfigurationError("grid side and window must be positive")
    radius = (window - 1) // 2
    rows, cols = np.divmod(np.arange(grid_side * grid_side), grid_side)
    allowed = ((np.abs(rows[:, None] - rows[None, :]) <= radius)
               & (np.abs(cols[:, None] - cols[None, :]) <= radius))
    return RegionalMask(grid_side, window, allowed)


class RegionalCrossAttentionBlock(nn.Module):
    """
    z_c' = z_c + SA(LN(z_c))
    h    = z_c' + CA(Q from LN(z_c'), K/V from LN(z_p), regional mask)
    z_o  = LN(h + FFN(LN(h)))
    """

    def __init__(self, dim, num_heads, mlp_ratio=4):
        super().__init__()
        self.norm_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, num_heads)
        self.norm_query = LayerNorm(dim)
        self.norm_prior = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, num_heads)
        self.norm_ffn = LayerNorm(dim)
        self.ffn = FeedForward(dim, mlp_ratio)
        self.norm_out = LayerNorm(dim)

    def forward(self, z_current, z_prior, mask=None):
        """mask: RegionalMask, or None for dense cross-attention."""
        side = grid_side(z_current)
        if z_prior.shape != z_current.shape:
            raise ShapeMismatchError(
                f"current grid {tuple(z_current.shape)} and prior grid {tuple(z_prior.shape)} differ")
        additive = None
        if mask is not None:
            if mask.grid_side != side:
                raise ShapeMismatchError(f"mask built for side {mask.grid_side}, grid side is {side}")
            additive = mask.additive(z_current.dtype, z_current.device)

        h = self.norm_self(z_current)
        refined = z_current + self.self_attn(h, h)
        h = refined + self.cross_attn(self.norm_query(refined), self.norm_prior(z_prior), additive)
        z_diff = self.norm_out(h + self.ffn(self.norm_ffn(h)))
        return check_finite(z_diff, "regional block output")
