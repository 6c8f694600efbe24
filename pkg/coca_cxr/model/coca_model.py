"""
CoCa-CXR Network
----------------
Shared ViT image encoder, unimodal text encoder, regional cross-attention
fusion of (current, prior) token grids and a multimodal text decoder.

Text sequences are laid out as [<bos> words... <eos> <pool> <pad>...] with
causal attention; the <pool> state gives the contrastive text embedding and
the same unimodal features feed the multimodal decoder.
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from coca_cxr.errors import ConfigurationError, ShapeMismatchError, VocabularyError
from coca_cxr.model.layers import LayerNorm, PatchEmbedding, TransformerBlock, causal_mask
from coca_cxr.model.regional_attention import RegionalCrossAttentionBlock, build_regional_mask
from coca_cxr.model.vocabulary import BOS_ID, EOS_ID, PAD_ID, POOL_ID
from coca_cxr.tensor_ops import avg_pool_grid

logger = logging.getLogger(__name__)

TEMPERATURE_RANGE = (1e-3, 10.0)
STREAMS = ("current", "prior", "diff")


@dataclass
class ModelOutput:
    logits: torch.Tensor       # (B, L, vocab)
    x: torch.Tensor            # (B, d) unit-norm image-pair embeddings
    y: torch.Tensor            # (B, d) unit-norm text embeddings
    temperature: torch.Tensor  # scalar


def prepare_images(images, side):
    """Zero-pad (B, H, W) or (H, W) images to centered squares and resize to `side`."""
    images = torch.as_tensor(images)
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3:
        raise ShapeMismatchError(f"expected (batch, height, width) images, got {tuple(images.shape)}")
    h, w = images.shape[-2:]
    if h != w:
        n = max(h, w)
        top, left = (n - h) // 2, (n - w) // 2
        images = F.pad(images, (left, n - w - left, top, n - h - top))
    if images.shape[-1] != side:
        images = F.interpolate(images[:, None], size=(side, side), mode="bilinear",
                               align_corners=False)[:, 0]
    return images


def constrained_choice(logits, choices):
    """The element of `choices` (token ids) with the highest logit; ties go to the first."""
    choices = list(choices)
    if not choices:
        raise ConfigurationError("constrained decoding needs a non-empty choice set")
    scores = logits[..., choices]
    return choices[int(torch.argmax(scores))]


class ImageEncoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        g, d = config.grid_side, config.embed_dim
        self.patch_embed = PatchEmbedding(config.patch_size, d)
        self.pos_embed = nn.Parameter(torch.randn(1, g * g, d) * 0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.num_heads, config.mlp_ratio) for _ in range(config.encoder_layers))
        self.norm = LayerNorm(d)

    def forward(self, images):
        x = self.patch_embed(images[:, None]) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


class TextEncoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        d = config.embed_dim
        self.token_embed = nn.Embedding(config.vocab_size, d)
        self.pos_embed = nn.Parameter(torch.randn(1, config.max_text_len, d) * 0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.num_heads, config.mlp_ratio)
            for _ in range(config.text_encoder_layers))
        self.norm = LayerNorm(d)

    def forward(self, token_ids):
        length = token_ids.shape[1]
        x = self.token_embed(token_ids) + self.pos_embed[:, :length]
        mask = causal_mask(length, x.dtype, x.device)
        for block in self.blocks:
            x = block(x, self_mask=mask)
        return self.norm(x)


class MultimodalDecoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        d = config.embed_dim
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.num_heads, config.mlp_ratio, cross_attention=True)
            for _ in range(config.decoder_layers))
        self.norm = LayerNorm(d)
        self.head = nn.Linear(d, config.vocab_size)

    def forward(self, text_features, memory):
        mask = causal_mask(text_features.shape[1], text_features.dtype, text_features.device)
        x = text_features
        for block in self.blocks:
            x = block(x, self_mask=mask, memory=memory)
        return self.head(self.norm(x))


class CoCaCXR(nn.Module):
    def __init__(self, config):
        super().__init__()
        if config.vocab_size is None:
            raise ConfigurationError("ModelConfig.vocab_size is unset; bind it to a vocabulary first")
        config.validate()
        self.config = config
        d = config.embed_dim

        self.image_encoder = ImageEncoder(config)
        self.text_encoder = TextEncoder(config)
        self.regional = (RegionalCrossAttentionBlock(d, config.num_heads, config.mlp_ratio)
                         if config.regional_attention else None)
        self.stream_embed = nn.Parameter(torch.randn(len(STREAMS), d) * 0.02)
        self.image_proj = nn.Linear(d, d, bias=False)
        self.text_proj = nn.Linear(d, d, bias=False)
        tau = torch.tensor(float(config.temperature_init))
        if config.temperature_learnable:
            self.temperature = nn.Parameter(tau)
        else:
            self.register_buffer("temperature", tau)
        self.decoder = MultimodalDecoder(config)
        self.regional_mask = build_regional_mask(config.grid_side, config.window)
        # Cleared while training stage 1; the regional block starts training in stage 2
        self.use_regional = self.regional is not None

    @property
    def dtype(self):
        return self.stream_embed.dtype

    def tau(self):
        return self.temperature.clamp(*TEMPERATURE_RANGE)

    def encode_image(self, images):
        """(B, H, W) or (H, W) pixels in [0, 1] -> (B, G*G, d) token grid."""
        images = prepare_images(images, self.config.image_side).to(self.dtype)
        return self.image_encoder(images)

    def check_token_ids(self, token_ids):
        token_ids = torch.as_tensor(token_ids, dtype=torch.long)
        if token_ids.ndim == 1:
            token_ids = token_ids[None]
        if token_ids.shape[1] > self.config.max_text_len:
            raise ShapeMismatchError(
                f"text of {token_ids.shape[1]} tokens exceeds max_text_len {self.config.max_text_len}")
        if token_ids.numel() and (token_ids.min() < 0 or token_ids.max() >= self.config.vocab_size):
            raise VocabularyError(f"token id outside vocabulary of size {self.config.vocab_size}")
        return token_ids

    def encode_text_unimodal(self, token_ids):
        """Return (per-token features (B, L, d), unit-norm y (B, d) from the <pool> state)."""
        token_ids = self.check_token_ids(token_ids)
        is_pool = token_ids == POOL_ID
        if not is_pool.any(dim=1).all():
            raise VocabularyError("every text sequence needs a <pool> token")
        features = self.text_encoder(token_ids)
        pool_pos = is_pool.int().argmax(dim=1)
        pooled = features[torch.arange(features.shape[0]), pool_pos]
        y = F.normalize(self.text_proj(pooled), dim=-1)
        return features, y

    def fuse_pair_tokens(self, z_current, z_prior, z_diff=None):
        """Pool each stream, add its stream embedding, concatenate (current, prior[, diff])."""
        streams = [z_current, z_prior] + ([z_diff] if z_diff is not None else [])
        pooled = [avg_pool_grid(z, self.config.pool_kernel) + self.stream_embed[i]
                  for i, z in enumerate(streams)]
        return torch.cat(pooled, dim=1)

    def encode_pair(self, current, prior):
        """Return (fused visual sequence, unit-norm image-pair embedding x)."""
        current = prepare_images(current, self.config.image_side)
        prior = prepare_images(prior, self.config.image_side)
        if current.shape != prior.shape:
            raise ShapeMismatchError("current and prior batches differ in shape")
        grids = self.encode_image(torch.cat([current, prior]))
        z_current, z_prior = grids.split(current.shape[0])
        z_diff = None
        if self.use_regional:
            z_diff = self.regional(z_current, z_prior, self.regional_mask)
        memory = self.fuse_pair_tokens(z_current, z_prior, z_diff)
        x = F.normalize(self.image_proj(memory.mean(dim=1)), dim=-1)
        return memory, x

    def forward(self, current, prior, token_ids):
        memory, x = self.encode_pair(current, prior)
        features, y = self.encode_text_unimodal(token_ids)
        logits = self.decoder(features, memory)
        return ModelOutput(logits=logits, x=x, y=y, temperature=self.tau())

    def next_token_logits(self, memory, ids):
        ids = self.check_token_ids(ids)
        features = self.text_encoder(ids)
        return self.decoder(features, memory)[:, -1]

    @torch.no_grad()
    def generate_from_memory(self, memory, prefix, max_len, mode="greedy", choices=None):
        """Decode one sequence against a (1, M, d) fused memory; see `generate_text`."""
        if mode not in ("greedy", "constrained"):
            raise ConfigurationError(f"unknown decoding mode '{mode}'")
        if mode == "constrained" and not choices:
            raise ConfigurationError("constrained decoding needs a non-empty choice set")
        ids = [int(i) for i in prefix]
        if not ids:
            raise ConfigurationError("decoding needs a non-empty prefix")
        if len(ids) > max_len:
            raise ConfigurationError(f"prefix of {len(ids)} tokens exceeds max_len {max_len}")
        max_len = min(max_len, self.config.max_text_len)
        if len(ids) >= max_len:
            return ids

        if mode == "constrained":
            logits = self.next_token_logits(memory, ids)[0]
            return ids + [constrained_choice(logits, choices)]

        banned = [PAD_ID, BOS_ID, POOL_ID]
        while len(ids) < max_len:
            logits = self.next_token_logits(memory, ids)[0]
            logits[banned] = float("-inf")
            token = int(torch.argmax(logits))
            ids.append(token)
            if token == EOS_ID:
                break
        return ids

    @torch.no_grad()
    def generate_text(self, current, prior, prefix, max_len, mode="greedy", choices=None):
        """
        Greedy: argmax decoding until <eos> or max_len tokens.
        Constrained: one step restricted to `choices`; returns prefix + [choice].
        A prefix already at max_len is returned unchanged.
        """
        memory, _ = self.encode_pair(current, prior)
        return self.generate_from_memory(memory[:1], prefix, max_len, mode, choices)

    def trainable_named_parameters(self, prefixes):
        """Parameters whose name starts with one of `prefixes`, in registration order."""
        prefixes = tuple(prefixes)
        return [(name, p) for name, p in self.named_parameters() if name.startswith(prefixes)]


def build_model(config, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    model = CoCaCXR(config).to(dtype)
    count = sum(p.numel() for p in model.parameters())
    logger.info("✓ Built CoCa-CXR model with %d parameters (grid %d, window %d, %d streams)",
                count, config.grid_side, config.window, config.num_streams)
    return model
