import numpy as np
import pytest
import torch
import torch.nn.functional as F

from coca_cxr.errors import ConfigurationError, ShapeMismatchError
from coca_cxr.model import RegionalCrossAttentionBlock, build_regional_mask
from coca_cxr.tensor_ops.functional import LAYER_NORM_EPS


def test_interior_support_is_window_squared():
    mask = build_regional_mask(12, 5)
    interior = 6 * 12 + 6
    assert len(mask.support(interior)) == 25


def test_full_scale_interior_support():
    mask = build_regional_mask(48, 11)
    assert len(mask.support(24 * 48 + 24)) == 121


def test_corner_support_is_clamped():
    mask = build_regional_mask(4, 3)
    assert set(mask.support(0)) == {0, 1, 4, 5}


def test_full_window_is_dense():
    g = 5
    mask = build_regional_mask(g, 2 * g - 1)
    assert (mask.support_sizes() == g * g).all()


def test_even_window_rejected():
    with pytest.raises(ConfigurationError):
        build_regional_mask(6, 4)


def test_additive_mask_values():
    mask = build_regional_mask(3, 1).additive(torch.float64)
    assert torch.equal(torch.diagonal(mask), torch.zeros(9, dtype=torch.float64))
    assert torch.isneginf(mask[0, 1])


@pytest.fixture
def block():
    torch.manual_seed(0)
    return RegionalCrossAttentionBlock(8, 2).double().eval()


def test_identity_pair_is_finite(block):
    z = torch.randn(2, 16, 8, dtype=torch.float64)
    out = block(z, z, build_regional_mask(4, 3))
    assert out.shape == (2, 16, 8)
    assert torch.isfinite(out).all()


def test_masked_independence(block):
    g, w = 6, 3
    mask = build_regional_mask(g, w)
    rng = np.random.default_rng(0)
    z_current = torch.randn(1, g * g, 8, dtype=torch.float64)
    z_prior = torch.randn(1, g * g, 8, dtype=torch.float64)
    with torch.no_grad():
        base = block(z_current, z_prior, mask)
        for _ in range(100):
            query = int(rng.integers(g * g))
            outside = np.flatnonzero(~mask.allowed[query])
            j = int(rng.choice(outside))
            perturbed = z_prior.clone()
            perturbed[0, j] += torch.from_numpy(rng.normal(size=8) * 5)
            out = block(z_current, perturbed, mask)
            assert torch.equal(out[0, query], base[0, query])


def dense_block_reference(block, z_current, z_prior):
    """The block recomputed with torch's fused attention and no mask."""

    def norm(layer, x):
        return F.layer_norm(x, (x.shape[-1],), layer.gain, layer.bias, LAYER_NORM_EPS)

    def attend(attn, queries, keys_values):
        def heads(t):
            b, length, d = t.shape
            return t.view(b, length, attn.num_heads, d // attn.num_heads).transpose(1, 2)

        out = F.scaled_dot_product_attention(
            heads(attn.w_q(queries)), heads(attn.w_k(keys_values)), heads(attn.w_v(keys_values)))
        b, h, length, d_head = out.shape
        return attn.w_o(out.transpose(1, 2).reshape(b, length, h * d_head))

    h = norm(block.norm_self, z_current)
    refined = z_current + attend(block.self_attn, h, h)
    h = refined + attend(block.cross_attn, norm(block.norm_query, refined), norm(block.norm_prior, z_prior))
    return norm(block.norm_out, h + block.ffn(norm(block.norm_ffn, h)))


def test_full_window_matches_dense(block):
    g = 4
    z_current = torch.randn(2, g * g, 8, dtype=torch.float64)
    z_prior = torch.randn(2, g * g, 8, dtype=torch.float64)
    with torch.no_grad():
        windowed = block(z_current, z_prior, build_regional_mask(g, 2 * g - 1))
        reference = dense_block_reference(block, z_current, z_prior)
    assert torch.allclose(windowed, reference, atol=1e-6)


def test_unmasked_block_matches_reference(block):
    z_current = torch.randn(1, 9, 8, dtype=torch.float64)
    z_prior = torch.randn(1, 9, 8, dtype=torch.float64)
    with torch.no_grad():
        assert torch.allclose(block(z_current, z_prior), dense_block_reference(block, z_current, z_prior),
                              atol=1e-10)


def test_small_window_differs_from_dense(block):
    g = 4
    z_current = torch.randn(1, g * g, 8, dtype=torch.float64)
    z_prior = torch.randn(1, g * g, 8, dtype=torch.float64)
    with torch.no_grad():
        windowed = block(z_current, z_prior, build_regional_mask(g, 3))
        reference = dense_block_reference(block, z_current, z_prior)
    assert not torch.allclose(windowed, reference, atol=1e-6)


def test_side_mismatch(block):
    z = torch.randn(1, 16, 8, dtype=torch.float64)
    with pytest.raises(ShapeMismatchError):
        block(z, z, build_regional_mask(5, 3))
    with pytest.raises(ShapeMismatchError):
        block(z, torch.randn(1, 25, 8, dtype=torch.float64), None)
