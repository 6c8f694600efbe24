"""
Three-Stage Trainer
-------------------
Runs one training stage at a time over a TrainState: freezes everything
outside the stage's trainable set, minimizes L_CoCa with AdamW, logs and
records losses, and writes checkpoints that resume bit-compatibly.
"""

import csv
import logging
import os
from dataclasses import dataclass, field

import torch
from tqdm import tqdm

from coca_cxr import __version__
from coca_cxr.errors import CheckpointCorruptError, ConfigurationError, NonFiniteLossError
from coca_cxr.model.coca_model import build_model
from coca_cxr.model.losses import coca_objective
from coca_cxr.model.vocabulary import Vocabulary
from coca_cxr.tensor_ops import AdamW, load_tensors, save_tensors
from coca_cxr.training.data_mixer import MixedBatchStream, batch_loader
from coca_cxr.training.stage_config import ExperimentConfig

logger = logging.getLogger(__name__)

METRICS_HEADER = ("iteration", "stage", "L_Con", "L_Cap", "total")
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainState:
    model: torch.nn.Module
    vocab: Vocabulary
    experiment: ExperimentConfig
    optimizer_state: dict = field(default_factory=dict)
    stage: int = 0                 # stage the optimizer state belongs to (0 = none yet)
    stage_iteration: int = 0
    global_iteration: int = 0
    completed_stages: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)  # (iteration, stage, con, cap, total)

    @property
    def seed(self):
        return self.experiment.seed


def new_train_state(experiment, vocab):
    model_config = experiment.model
    if model_config.vocab_size is None:
        model_config = model_config.with_vocab_size(len(vocab))
        experiment.model = model_config
    if model_config.vocab_size != len(vocab):
        raise ConfigurationError(
            f"model vocab_size {model_config.vocab_size} does not match vocabulary of {len(vocab)}")
    model = build_model(model_config, seed=experiment.seed, dtype=DTYPES[experiment.dtype])
    enable_regional(model, 0)
    return TrainState(model=model, vocab=vocab, experiment=experiment)


def enable_regional(model, stage):
    """The regional stream joins the fused memory from stage 2 on."""
    model.use_regional = model.regional is not None and stage >= 2
    return model.use_regional


def set_trainable(model, prefixes):
    """requires_grad on parameters in the trainable set, off everywhere else."""
    prefixes = tuple(prefixes)
    named = []
    for name, param in model.named_parameters():
        trainable = name.startswith(prefixes)
        param.requires_grad_(trainable)
        if trainable:
            named.append((name, param))
    return named


def append_metrics(path, rows):
    new_file = not os.path.exists(path)
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(METRICS_HEADER)
        writer.writerows(rows)


def run_stage(stage_config, state, data, out_dir=None, progress=True):
    """
    Train `stage_config.iterations` steps of L_CoCa on the stage's trainable set.
    Resumes mid-stage when `state` already belongs to this stage.
    """
    model = state.model
    if state.stage != stage_config.stage:
        state.stage = stage_config.stage
        state.stage_iteration = 0
        state.optimizer_state = {}

    enable_regional(model, stage_config.stage)
    named = set_trainable(model, stage_config.trainable)
    if not named:
        raise ConfigurationError(f"stage {stage_config.stage} has no trainable parameters")
    optimizer = AdamW(named, lr=stage_config.lr, betas=stage_config.betas, eps=stage_config.eps,
                      weight_decay=stage_config.weight_decay)
    optimizer.import_state(state.optimizer_state)

    start, stop = state.stage_iteration, stage_config.iterations
    logger.info("Stage %d: %d trainable tensors, iterations %d..%d, lr %g",
                stage_config.stage, len(named), start, stop, stage_config.lr)
    metrics_path = os.path.join(out_dir, "metrics.csv") if out_dir else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    stream = MixedBatchStream(data, state.vocab, stage_config, model.config.max_text_len,
                              start, stop, stage_config.batch_seed(state.seed))
    model.train()
    pending_rows = []
    bar = tqdm(batch_loader(stream, state.experiment.prefetch_workers), total=max(0, stop - start),
               desc=f"Stage {stage_config.stage}", disable=not progress, leave=False)
    for iteration, batch in bar:
        total, con, cap = coca_objective(model, batch["current"], batch["prior"], batch["token_ids"],
                                         stage_config.contrastive_weight)
        if not torch.isfinite(total):
            path = None
            if out_dir:
                path = os.path.join(out_dir, f"stage{stage_config.stage}_last_finite.ckpt")
                state.optimizer_state = optimizer.export_state()
                save_checkpoint(state, path)
            raise NonFiniteLossError(state.global_iteration, path)

        optimizer.zero_grad(set_to_none=True)
        total.backward()
        optimizer.step()

        state.stage_iteration = iteration + 1
        state.global_iteration += 1
        row = (state.global_iteration, stage_config.stage, float(con), float(cap), float(total))
        state.loss_history.append(row)
        pending_rows.append(row)
        if state.stage_iteration % stage_config.log_every == 0:
            logger.info("stage %d iter %d  L_Con %.4f  L_Cap %.4f  total %.4f",
                        stage_config.stage, state.stage_iteration, row[2], row[3], row[4])
            if metrics_path:
                append_metrics(metrics_path, pending_rows)
                pending_rows = []

    if metrics_path and pending_rows:
        append_metrics(metrics_path, pending_rows)
    state.optimizer_state = optimizer.export_state()
    if stage_config.stage not in state.completed_stages:
        state.completed_stages.append(stage_config.stage)
    set_trainable(model, ())

    if out_dir:
        save_checkpoint(state, os.path.join(out_dir, f"stage{stage_config.stage}.ckpt"))
    logger.info("✓ Stage %d finished at global iteration %d", stage_config.stage, state.global_iteration)
    return state


def run_stages(state, data, stages=(1, 2, 3), out_dir=None, progress=True):
    for stage_id in stages:
        state = run_stage(state.experiment.stage(stage_id), state, data, out_dir, progress)
    return state


def save_checkpoint(state, path):
    """Params, buffers, optimizer moments and torch RNG state in one checkpoint file."""
    tensors = {}
    for name, param in state.model.named_parameters():
        tensors[f"param/{name}"] = param
    for name, buffer in state.model.named_buffers():
        tensors[f"buffer/{name}"] = buffer
    steps = {}
    for name, slot in state.optimizer_state.items():
        tensors[f"optim/{name}/exp_avg"] = slot["exp_avg"]
        tensors[f"optim/{name}/exp_avg_sq"] = slot["exp_avg_sq"]
        steps[name] = int(slot["step"])
    tensors["rng/torch"] = torch.get_rng_state()

    meta = {
        "version": __version__,
        "experiment": state.experiment.to_dict(),
        "vocab": state.vocab.tokens,
        "stage": state.stage,
        "stage_iteration": state.stage_iteration,
        "global_iteration": state.global_iteration,
        "completed_stages": list(state.completed_stages),
        "loss_history": [list(row) for row in state.loss_history],
        "optimizer_steps": steps,
    }
    save_tensors(path, tensors, meta)
    logger.info("✓ Checkpoint saved to %s", path)
    return path


def load_checkpoint(path):
    arrays, meta = load_tensors(path)
    try:
        experiment = ExperimentConfig.from_dict(meta["experiment"])
        vocab = Vocabulary(meta["vocab"])
    except (KeyError, TypeError) as e:
        raise CheckpointCorruptError(f"{path}: incomplete metadata ({e})") from e

    state = new_train_state(experiment, vocab)
    model = state.model
    expected = {f"param/{n}": p for n, p in model.named_parameters()}
    expected.update({f"buffer/{n}": b for n, b in model.named_buffers()})
    stored = {k for k in arrays if k.startswith(("param/", "buffer/"))}
    if stored != set(expected):
        missing = sorted(set(expected) - stored)[:3]
        extra = sorted(stored - set(expected))[:3]
        raise CheckpointCorruptError(f"{path}: tensor names differ (missing {missing}, unexpected {extra})")
    with torch.no_grad():
        for key, target in expected.items():
            value = torch.from_numpy(arrays[key])
            if value.shape != target.shape:
                raise CheckpointCorruptError(f"{path}: shape mismatch for {key}")
            target.copy_(value)

    optimizer_state = {}
    for name, step in meta.get("optimizer_steps", {}).items():
        optimizer_state[name] = {
            "step": int(step),
            "exp_avg": torch.from_numpy(arrays[f"optim/{name}/exp_avg"]),
            "exp_avg_sq": torch.from_numpy(arrays[f"optim/{name}/exp_avg_sq"]),
        }
    if "rng/torch" in arrays:
        torch.set_rng_state(torch.from_numpy(arrays["rng/torch"]))

    state.optimizer_state = optimizer_state
    state.stage = int(meta.get("stage", 0))
    state.stage_iteration = int(meta.get("stage_iteration", 0))
    state.global_iteration = int(meta.get("global_iteration", 0))
    state.completed_stages = [int(s) for s in meta.get("completed_stages", [])]
    state.loss_history = [tuple(row) for row in meta.get("loss_history", [])]
    enable_regional(model, max(state.completed_stages + [state.stage]))
    if meta.get("version") != __version__:
        logger.warning("checkpoint written by coca_cxr %s, running %s", meta.get("version"), __version__)
    return state


def checkpoint_roundtrip(state, path):
    save_checkpoint(state, path)
    return load_checkpoint(path)


def frozen_snapshot(model, trainable_prefixes):
    """Copies of every parameter outside the trainable set, for freezing checks."""
    prefixes = tuple(trainable_prefixes)
    return {name: p.detach().clone() for name, p in model.named_parameters()
            if not name.startswith(prefixes)}


def params_equal(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


__all__ = [
    "TrainState", "new_train_state", "enable_regional", "run_stage", "run_stages", "save_checkpoint",
    "load_checkpoint", "checkpoint_roundtrip", "set_trainable", "frozen_snapshot", "params_equal",
]
