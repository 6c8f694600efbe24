"""
Model Configuration
-------------------
Shape and objective hyperparameters of the CoCa-CXR network.
"""

from dataclasses import dataclass, replace

from coca_cxr.config_io import config_from_dict, config_to_dict, load_config, save_config
from coca_cxr.errors import ConfigurationError


@dataclass
class ModelConfig:
    image_side: int = 48            # pixels, square after padding/resizing
    patch_size: int = 4
    embed_dim: int = 64
    num_heads: int = 4
    encoder_layers: int = 2
    text_encoder_layers: int = 2    # unimodal text layers
    decoder_layers: int = 2         # multimodal layers
    window: int = 3                 # regional cross-attention window, odd
    pool_kernel: int = 3
    vocab_size: int = None          # None until bound to a vocabulary
    max_text_len: int = 64
    lambda_cap: float = 2.0
    temperature_init: float = 0.07
    temperature_learnable: bool = True
    regional_attention: bool = True  # False drops the difference stream (ablation)
    mlp_ratio: int = 4

    def __post_init__(self):
        self.validate()

    @property
    def grid_side(self):
        return self.image_side // self.patch_size

    @property
    def pooled_side(self):
        return self.grid_side // self.pool_kernel

    @property
    def num_streams(self):
        return 3 if self.regional_attention else 2

    def validate(self):
        if min(self.image_side, self.patch_size, self.embed_dim, self.num_heads,
               self.pool_kernel, self.max_text_len, self.mlp_ratio) < 1:
            raise ConfigurationError("sizes must be positive")
        if self.image_side % self.patch_size:
            raise ConfigurationError(
                f"image_side {self.image_side} is not divisible by patch_size {self.patch_size}")
        g = self.grid_side
        if self.window % 2 == 0:
            raise ConfigurationError(f"window must be odd, got {self.window}")
        if not 1 <= self.window <= 2 * g - 1:
            raise ConfigurationError(f"window {self.window} outside [1, {2 * g - 1}] for grid side {g}")
        if g % self.pool_kernel:
            raise ConfigurationError(f"grid side {g} is not divisible by pool_kernel {self.pool_kernel}")
        if self.embed_dim % self.num_heads:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.vocab_size is not None and self.vocab_size < 5:
            raise ConfigurationError(f"vocab_size {self.vocab_size} is too small")
        if self.max_text_len < 4:
            raise ConfigurationError("max_text_len must leave room for <bos>, <eos> and <pool>")
        if self.lambda_cap < 0:
            raise ConfigurationError(f"lambda_cap must be >= 0, got {self.lambda_cap}")
        if not 1e-3 <= self.temperature_init <= 10:
            raise ConfigurationError(f"temperature_init {self.temperature_init} outside [1e-3, 10]")
        return self

    def with_vocab_size(self, vocab_size):
        return replace(self, vocab_size=vocab_size)

    @classmethod
    def desk_scale(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def full_scale(cls, **overrides):
        values = dict(image_side=768, patch_size=16, embed_dim=768, num_heads=12,
                      encoder_layers=12, text_encoder_layers=6, decoder_layers=6,
                      window=11, pool_kernel=3)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def tiny(cls, **overrides):
        """Gradient-check scale: G=4, d=16."""
        values = dict(image_side=16, patch_size=4, embed_dim=16, num_heads=2, encoder_layers=1,
                      text_encoder_layers=1, decoder_layers=1, window=3, pool_kernel=2,
                      max_text_len=12)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_dict(cls, data):
        return config_from_dict(cls, data)

    def to_dict(self):
        return config_to_dict(self)

    @classmethod
    def load(cls, path):
        return load_config(cls, path)

    def save(self, path):
        save_config(self, path)
