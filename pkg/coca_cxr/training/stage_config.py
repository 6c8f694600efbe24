"""
Stage Configuration
-------------------
Per-stage learning rate, iteration budget, batch size, trainable parameter
set and sub-dataset mixing ratios, plus the experiment config that bundles
the model config with the three stages.
"""

import json
import math
from dataclasses import dataclass, field, replace

from coca_cxr.config_io import config_from_dict, config_to_dict, load_config
from coca_cxr.errors import ConfigurationError
from coca_cxr.model.config import ModelConfig

STAGE_IDS = (1, 2, 3)
PAIR_RATIOS = (0.2, 0.25, 0.25, 0.3)

# Parameter-name prefixes of each trainable set
TRAINABLE_SETS = {
    1: ("image_encoder.", "text_encoder.", "decoder.", "image_proj.", "text_proj.", "temperature"),
    2: ("regional.", "stream_embed"),
    3: ("regional.", "stream_embed", "decoder.", "image_proj.", "text_proj.", "temperature"),
}

DESK_SCALE = {
    "lr": {1: 4e-4, 2: 2e-3, 3: 4e-4},
    "iterations": {1: 2000, 2: 1000, 3: 3000},
    "batch_size": 16,
}
FULL_SCALE = {
    "lr": {1: 2e-5, 2: 1e-4, 3: 2e-5},
    "iterations": {1: 20000, 2: 10000, 3: 30000},
    "batch_size": 64,
}


@dataclass
class StageConfig:
    stage: int
    lr: float
    iterations: int
    batch_size: int = 16
    trainable: tuple = ()
    ratios: tuple = (1.0, 0.0, 0.0, 0.0)
    seed: object = None            # batch seed; None follows the experiment seed
    log_every: int = 50
    contrastive_weight: float = 1.0  # 0 trains without the contrastive term
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        self.trainable = tuple(self.trainable) or TRAINABLE_SETS.get(self.stage, ())
        self.ratios = tuple(float(r) for r in self.ratios)
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self):
        if self.stage not in STAGE_IDS:
            raise ConfigurationError(f"stage must be one of {STAGE_IDS}, got {self.stage}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2 for the contrastive loss")
        if len(self.ratios) != 4 or min(self.ratios) < 0 or not math.isclose(sum(self.ratios), 1.0, abs_tol=1e-9):
            raise ConfigurationError(f"ratios must be 4 non-negative values summing to 1, got {self.ratios}")
        if self.stage == 1 and self.ratios != (1.0, 0.0, 0.0, 0.0):
            raise ConfigurationError("stage 1 trains on sub-dataset 1 only")
        if self.contrastive_weight < 0:
            raise ConfigurationError("contrastive_weight must be >= 0")
        if self.log_every < 1:
            raise ConfigurationError("log_every must be >= 1")
        if self.seed is not None and (isinstance(self.seed, bool) or not isinstance(self.seed, int)):
            raise ConfigurationError(f"stage seed must be an integer or null, got {self.seed!r}")
        return self

    def batch_seed(self, experiment_seed):
        return experiment_seed if self.seed is None else self.seed

    @classmethod
    def from_dict(cls, data):
        return config_from_dict(cls, data)

    def to_dict(self):
        return config_to_dict(self)


def default_stage_config(stage, scale="desk", **overrides):
    table = {"desk": DESK_SCALE, "full": FULL_SCALE}.get(scale)
    if table is None:
        raise ConfigurationError(f"unknown scale '{scale}'")
    values = dict(
        stage=stage,
        lr=table["lr"][stage],
        iterations=table["iterations"][stage],
        batch_size=table["batch_size"],
        ratios=(1.0, 0.0, 0.0, 0.0) if stage == 1 else PAIR_RATIOS,
    )
    values.update(overrides)
    return StageConfig(**values)


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    stages: list = field(default_factory=list)  # full or partial stage entries over the defaults
    seed: int = 0
    dtype: str = "float32"          # float64 for bit-exact resume checks
    prefetch_workers: int = 0

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        stages = {s: default_stage_config(s) for s in STAGE_IDS}
        for entry in self.stages:
            if isinstance(entry, dict):
                if "stage" not in entry:
                    raise ConfigurationError("every stage entry needs a 'stage' key")
                base = stages.get(entry["stage"])
                if base is None:
                    raise ConfigurationError(f"unknown stage {entry['stage']}")
                merged = base.to_dict()
                merged.update(entry)
                entry = StageConfig.from_dict(merged)
            stages[entry.stage] = entry
        self.stages = [stages[s] for s in STAGE_IDS]
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")

    def stage(self, stage_id):
        return self.stages[stage_id - 1]

    def with_stage(self, stage_config):
        stages = [stage_config if s.stage == stage_config.stage else s for s in self.stages]
        return replace(self, stages=stages)

    @classmethod
    def from_dict(cls, data):
        return config_from_dict(cls, data)

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "stages": [s.to_dict() for s in self.stages],
            "seed": self.seed,
            "dtype": self.dtype,
            "prefetch_workers": self.prefetch_workers,
        }

    @classmethod
    def load(cls, path):
        return load_config(cls, path)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
