"""
CoCa-CXR Pipeline
-----------------
Orchestrates the end-to-end flow behind every command: synthetic corpus,
sub-datasets, three-stage training, held-out evaluation, generation and the
gradient check. Every artifact-producing step writes a run manifest beside
its outputs.
"""

import json
import logging
import os
import sys
import time
from datetime import datetime

import numpy as np
import torch

from coca_cxr import __version__
from coca_cxr.corpus_generator import (
    GenConfig,
    StudyPreviewRenderer,
    build_subdatasets,
    generate_pairs,
    load_image,
    load_pairs,
    write_corpus,
)
from coca_cxr.errors import ConfigurationError, UsageError
from coca_cxr.evaluation import HeldOutEvaluator
from coca_cxr.model import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    POOL_ID,
    SPECIAL_TOKENS,
    ModelConfig,
    Vocabulary,
    build_model,
    coca_objective,
)
from coca_cxr.report_processor import PROGRESSIONS, process_report_file
from coca_cxr.tensor_ops import finite_diff_gradcheck
from coca_cxr.training import (
    ExperimentConfig,
    SubDatasets,
    capped_workers,
    load_checkpoint,
    new_train_state,
    run_stages,
)

logger = logging.getLogger(__name__)

MANIFEST_FILE = "run_manifest.json"
VOCAB_FILE = "vocab.txt"
PREVIEW_FILE = "preview.png"
GRADCHECK_TOLERANCE = 1e-4


def write_manifest(out_dir, command, config=None, seed=None, extra=None):
    """Config, seed and version of a run, enough to reproduce its outputs."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "version": __version__,
        "seed": seed,
        "config": config,
        "created": datetime.now().isoformat(timespec="seconds"),
    }
    manifest.update(extra or {})
    path = os.path.join(out_dir, MANIFEST_FILE)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return path


def load_vocabulary(data_dir):
    path = os.path.join(data_dir, VOCAB_FILE) if data_dir else None
    if path and os.path.exists(path):
        return Vocabulary.load(path)
    return Vocabulary.default()


class CocaCxrPipeline:
    def __init__(self):
        """Initialize the pipeline components."""
        self.preview_renderer = StudyPreviewRenderer()

        # Gradient-check setup: a tiny 64-bit model over a 32-token vocabulary
        self.gradcheck_setup = {
            "vocab_size": 32,
            "batch": 4,
            "text_len": 10,
            "coords_per_param": 8,
            "h": 1e-5,
        }

    def generate_corpus(self, n, out_dir, gen_config=None):
        """Generate `n` study pairs, their sub-datasets, vocabulary and a preview sheet."""
        gen_config = gen_config or GenConfig()
        start_time = time.time()

        logger.info("Step 1: Generating %d study pairs (seed %d)...", n, gen_config.seed)
        workers = capped_workers(min(8, os.cpu_count() or 1))
        pairs = generate_pairs(n, gen_config, workers=workers)

        logger.info("Step 2: Writing corpus and sub-datasets...")
        records = write_corpus(pairs, out_dir)
        counts = build_subdatasets(records, out_dir)
        Vocabulary.default().save(os.path.join(out_dir, VOCAB_FILE))
        gen_config.save(os.path.join(out_dir, "gen_config.json"))

        preview = None
        if gen_config.preview_count > 0:
            preview = self.preview_renderer.render(pairs[:gen_config.preview_count],
                                                   os.path.join(out_dir, PREVIEW_FILE))
        write_manifest(out_dir, "gen-corpus", gen_config.to_dict(), gen_config.seed,
                       {"pairs": n, "subdatasets": counts})
        logger.info("✓ Corpus ready in %.1f s", time.time() - start_time)
        return {"pairs": len(records), "subdatasets": counts, "preview": preview}

    def build_subdatasets(self, data_dir, out_dir=None, reports_path=None):
        """Re-derive sub-datasets from a stored corpus; optionally run the report pipeline on a file."""
        out_dir = out_dir or data_dir
        counts = build_subdatasets(load_pairs(data_dir), out_dir)
        result = {"subdatasets": counts}
        if reports_path:
            result["reports"] = process_report_file(reports_path,
                                                    os.path.join(out_dir, "processed_reports.jsonl"))
        write_manifest(out_dir, "build-subdatasets", {"data": data_dir, "reports": reports_path}, None,
                       {"counts": result})
        return result

    def train(self, stages, data_dir, out_dir, experiment=None, checkpoint=None, corpus_dir=None, seed=None):
        """
        Run `stages` in order, starting fresh or from `checkpoint`. Without an
        explicit `experiment` a resumed run keeps the checkpoint's own; `seed`
        overrides only the seed.
        """
        if stages[0] != 1 and checkpoint is None:
            raise UsageError(f"stage {stages[0]} needs --checkpoint from an earlier stage")

        if checkpoint:
            state = load_checkpoint(checkpoint)
            if experiment is not None:
                if experiment.model.with_vocab_size(len(state.vocab)) != state.experiment.model:
                    raise ConfigurationError("--config model section differs from the checkpoint's model")
                experiment.model = state.experiment.model
                state.experiment = experiment
            if seed is not None:
                state.experiment.seed = seed
            logger.info("✓ Resumed from %s (stage %d, iteration %d)", checkpoint, state.stage,
                        state.stage_iteration)
        else:
            experiment = experiment or ExperimentConfig()
            if seed is not None:
                experiment.seed = seed
            state = new_train_state(experiment, load_vocabulary(data_dir))

        data = SubDatasets.from_directory(data_dir, corpus_dir or data_dir,
                                          side=state.experiment.model.image_side)
        write_manifest(out_dir, "train", state.experiment.to_dict(), state.seed,
                       {"stages": list(stages), "checkpoint": checkpoint, "data": data_dir})
        state = run_stages(state, data, stages, out_dir)
        return state

    def evaluate(self, checkpoint, data_dir, out_dir, limit=None):
        state = load_checkpoint(checkpoint)
        records = load_pairs(data_dir, split="test")
        if limit:
            records = records[:limit]
        if not records:
            raise UsageError(f"no held-out pairs in {data_dir}")
        evaluator = HeldOutEvaluator(state.model, state.vocab, data_dir)
        summary = evaluator.evaluate(records, out_dir)
        write_manifest(out_dir, "eval", state.experiment.to_dict(), state.seed,
                       {"checkpoint": checkpoint, "pairs": len(records)})
        return summary

    def generate(self, checkpoint, current_path, prior_path=None, prompt="", mode="greedy", max_len=None):
        """Decode text for one image pair; constrained mode picks one progression word."""
        state = load_checkpoint(checkpoint)
        model, vocab = state.model, state.vocab
        side = model.config.image_side
        current = load_image(current_path, side)
        prior = load_image(prior_path, side) if prior_path else current
        prefix = [BOS_ID] + vocab.encode(prompt)
        choices = [vocab.token_id(label) for label in PROGRESSIONS] if mode == "constrained" else None
        model.eval()
        ids = model.generate_text(current, prior, prefix, max_len or model.config.max_text_len,
                                  mode=mode, choices=choices)
        return vocab.decode(ids)

    def gradcheck(self, seed=0):
        """Max relative error of L_CoCa gradients on a tiny 64-bit model."""
        setup = self.gradcheck_setup
        config = ModelConfig.tiny(vocab_size=setup["vocab_size"])
        model = build_model(config, seed=seed, dtype=torch.float64)

        rng = np.random.default_rng(seed)
        n, length, side = setup["batch"], setup["text_len"], config.image_side
        current = torch.from_numpy(rng.random((n, side, side)))
        prior = torch.from_numpy(rng.random((n, side, side)))
        token_ids = np.full((n, length), PAD_ID, dtype=np.int64)
        for i in range(n):
            words = rng.integers(len(SPECIAL_TOKENS), setup["vocab_size"],
                                 size=int(rng.integers(2, length - 3)))
            row = [BOS_ID] + words.tolist() + [EOS_ID, POOL_ID]
            token_ids[i, :len(row)] = row
        token_ids = torch.from_numpy(token_ids)

        params = dict(model.named_parameters())

        def objective():
            return coca_objective(model, current, prior, token_ids)[0]

        return finite_diff_gradcheck(objective, params, h=setup["h"],
                                     coords_per_param=setup["coords_per_param"], seed=seed)

    def inspect_checkpoint(self, checkpoint):
        state = load_checkpoint(checkpoint)
        return {
            "stage": state.stage,
            "stage_iteration": state.stage_iteration,
            "global_iteration": state.global_iteration,
            "completed_stages": state.completed_stages,
            "parameters": sum(p.numel() for p in state.model.parameters()),
            "vocab_size": len(state.vocab),
            "seed": state.seed,
            "last_loss": list(state.loss_history[-1]) if state.loss_history else None,
            "model": state.experiment.model.to_dict(),
        }
