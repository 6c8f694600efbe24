"""
Tensor Primitives
-----------------
Masked softmax, layer normalization, scaled dot-product attention and grid
pooling on top of torch autograd. Token grids are (batch, side*side, dim)
tensors flattened row-major.
"""

import logging
import math
import os

import torch
import torch.nn.functional as F

from coca_cxr.errors import (
    ConfigurationError,
    EmptyAttentionSupportError,
    NonFiniteTensorError,
    ShapeMismatchError,
)

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5

_debug = os.environ.get("COCA_DEBUG", "") not in ("", "0")


def set_debug(enabled):
    """Turn finite-value checks on primitive outputs on or off."""
    global _debug
    _debug = bool(enabled)
    logger.debug("debug checks %s", "enabled" if _debug else "disabled")


def debug_enabled():
    return _debug


def check_finite(tensor, name="tensor"):
    """Raise NonFiniteTensorError if debug mode is on and `tensor` holds NaN/Inf."""
    if _debug and not torch.isfinite(tensor).all():
        raise NonFiniteTensorError(f"non-finite values in {name}")
    return tensor


def softmax_lastdim(x, additive_mask=None):
    """Softmax over the last dimension with an optional 0/-inf additive mask."""
    logits = x if additive_mask is None else x + additive_mask
    if additive_mask is not None and torch.isneginf(logits).all(dim=-1).any():
        raise EmptyAttentionSupportError()

    # Max-subtraction; the shift cancels analytically so it carries no gradient
    shift = logits.amax(dim=-1, keepdim=True).detach()
    weights = torch.exp(logits - shift)
    out = weights / weights.sum(dim=-1, keepdim=True)
    return check_finite(out, "softmax output")


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalize over the last dimension, then apply gain and bias."""
    if x.shape[-1] < 2:
        raise ShapeMismatchError(f"layer_norm needs a last dimension of at least 2, got {x.shape[-1]}")
    out = F.layer_norm(x, (x.shape[-1],), gain, bias, eps)
    return check_finite(out, "layer_norm output")


def _split_heads(t, num_heads):
    *lead, length, dim = t.shape
    t = t.reshape(*lead, length, num_heads, dim // num_heads)
    return t.transpose(-3, -2)


def _merge_heads(t):
    *lead, heads, length, head_dim = t.shape
    return t.transpose(-3, -2).reshape(*lead, length, heads * head_dim)


def scaled_dot_attention(q, k, v, additive_mask=None, num_heads=1):
    """
    softmax(Q K^T / sqrt(d_head) + mask) V, split into `num_heads` equal heads.

    q: (..., Lq, d), k: (..., Lk, d), v: (..., Lk, dv)
    additive_mask: broadcastable to (..., Lq, Lk), entries 0 or -inf
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatchError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeMismatchError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    if q.shape[-1] % num_heads or v.shape[-1] % num_heads:
        raise ConfigurationError(f"dimension {q.shape[-1]} is not divisible into {num_heads} heads")

    qh, kh, vh = (_split_heads(t, num_heads) for t in (q, k, v))
    scores = qh @ kh.transpose(-2, -1) / math.sqrt(qh.shape[-1])
    mask = None if additive_mask is None else additive_mask.unsqueeze(-3)
    weights = softmax_lastdim(scores, mask)
    return _merge_heads(weights @ vh)


def grid_side(tokens):
    """Side length of a flattened square token grid (batch, side*side, dim)."""
    side = math.isqrt(tokens.shape[-2])
    if side * side != tokens.shape[-2]:
        raise ShapeMismatchError(f"{tokens.shape[-2]} tokens do not form a square grid")
    return side


def avg_pool_grid(tokens, kernel):
    """Non-overlapping kernel x kernel average pooling of a token grid."""
    side = grid_side(tokens)
    if kernel < 1 or side % kernel:
        raise ShapeMismatchError(f"grid side {side} is not divisible by pool kernel {kernel}")
    batch, _, dim = tokens.shape
    grid = tokens.transpose(1, 2).reshape(batch, dim, side, side)
    pooled = F.avg_pool2d(grid, kernel_size=kernel, stride=kernel)
    return pooled.flatten(2).transpose(1, 2)
