#!/usr/bin/env python3
"""
CoCa-CXR Desk Run
-----------------
Generates a synthetic corpus, trains all three stages and evaluates the
held-out pairs in one go.

Usage:
    python run_coca_cxr.py [n_pairs] [seed]

Everything is written under runs/seed<seed>/.
"""

import os
import sys
import time

from coca_cxr.cli import configure_logging
from coca_cxr.corpus_generator import GenConfig
from coca_cxr.errors import CocaCxrError
from coca_cxr.pipeline import CocaCxrPipeline
from coca_cxr.training import ExperimentConfig


def main():
    try:
        n_pairs = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
        seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    except ValueError:
        print("Usage: python run_coca_cxr.py [n_pairs] [seed]", file=sys.stderr)
        return 1

    configure_logging()
    run_dir = os.path.join("runs", f"seed{seed}")
    data_dir = os.path.join(run_dir, "data")
    pipeline = CocaCxrPipeline()

    start_time = time.time()
    try:
        pipeline.generate_corpus(n_pairs, data_dir, GenConfig(seed=seed))
        pipeline.train([1, 2, 3], data_dir, os.path.join(run_dir, "train"), ExperimentConfig(seed=seed))
        summary = pipeline.evaluate(os.path.join(run_dir, "train", "stage3.ckpt"), data_dir,
                                    os.path.join(run_dir, "eval"))
    except CocaCxrError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    print(f"\nCompleted in {time.time() - start_time:.1f} seconds")
    print("\nSummary:")
    print(f"- Pairs: {n_pairs} (seed {seed})")
    print(f"- Macro-accuracy: {summary.value('accuracy', 'macro'):.3f}")
    print(f"- Results: {summary.results_path}")
    print(f"- Preview: {os.path.join(data_dir, 'preview.png')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
