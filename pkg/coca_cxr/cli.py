"""
Command Line
------------
coca-cxr SUBCOMMAND [flags]

    gen-corpus          synthetic pairs, sub-datasets, vocabulary, preview
    build-subdatasets   re-derive sub-datasets (and process a report file)
    train               run stage 1, 2, 3 or all from a config
    eval                held-out classification, swap consistency, IoU, token F1
    gradcheck           finite-difference check of the full loss
    generate            decode text for one image pair
    inspect-checkpoint  print a checkpoint summary

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr; results go to files (and small summaries to stdout).
"""

import argparse
import json
import logging
import os
import sys

from coca_cxr import __version__
from coca_cxr.corpus_generator import GenConfig
from coca_cxr.errors import CocaCxrError, UsageError
from coca_cxr.pipeline import GRADCHECK_TOLERANCE, CocaCxrPipeline, write_manifest
from coca_cxr.tensor_ops import set_debug
from coca_cxr.training import STAGE_IDS, ExperimentConfig

logger = logging.getLogger("coca_cxr")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class ArgumentParser(argparse.ArgumentParser):
    """Usage problems raise UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = ArgumentParser(prog="coca-cxr", description="Contrastive captioning of chest X-ray pairs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)

    p = sub.add_parser("gen-corpus", help="generate a synthetic paired corpus")
    p.add_argument("--n", type=int, required=True, help="number of study pairs")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="GenConfig JSON file")

    p = sub.add_parser("build-subdatasets", help="derive sub-datasets from a stored corpus")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", help="output directory (default: --data)")
    p.add_argument("--reports", help="header-sectioned report file to run through the pipeline")

    p = sub.add_parser("train", help="run training stages")
    p.add_argument("--stage", required=True, choices=[str(s) for s in STAGE_IDS] + ["all"])
    p.add_argument("--config", help="ExperimentConfig JSON file")
    p.add_argument("--data", required=True, help="directory with subdataset_{1..4}.jsonl")
    p.add_argument("--corpus", help="directory image paths resolve against (default: --data)")
    p.add_argument("--checkpoint", help="checkpoint to resume or continue from")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None, help="evaluate the first N held-out pairs")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check of the full loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for the run manifest")

    p = sub.add_parser("generate", help="decode text for an image pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--current", required=True, help="current image")
    p.add_argument("--prior", help="prior image (default: the current image)")
    p.add_argument("--prompt", default="", help="text the decoding continues from")
    p.add_argument("--mode", choices=("greedy", "constrained"), default="greedy")
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--out", help="write the generation as JSON here")

    p = sub.add_parser("inspect-checkpoint", help="summarize a checkpoint")
    p.add_argument("--checkpoint", required=True)
    return parser


def configure_logging():
    debug = os.environ.get("COCA_DEBUG") == "1"
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(logging.DEBUG if debug else logging.INFO)
    logger.propagate = False
    set_debug(debug)


def _gen_corpus(args, pipeline):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    config = GenConfig.load(args.config) if args.config else GenConfig()
    if args.seed is not None:
        config.seed = args.seed
    pipeline.generate_corpus(args.n, args.out, config)


def _build_subdatasets(args, pipeline):
    pipeline.build_subdatasets(args.data, args.out, args.reports)


def _train(args, pipeline):
    stages = list(STAGE_IDS) if args.stage == "all" else [int(args.stage)]
    if stages[0] != 1 and not args.checkpoint:
        raise UsageError(f"stage {stages[0]} needs --checkpoint from an earlier stage")
    experiment = ExperimentConfig.load(args.config) if args.config else None
    state = pipeline.train(stages, args.data, args.out, experiment, args.checkpoint, args.corpus, args.seed)
    if state.loss_history:
        _, stage, con, cap, total = state.loss_history[-1]
        print(f"stage {stage} final loss {total:.4f} (L_Con {con:.4f}, L_Cap {cap:.4f})")


def _eval(args, pipeline):
    summary = pipeline.evaluate(args.checkpoint, args.data, args.out, args.limit)
    with open(summary.summary_path) as f:
        sys.stdout.write(f.read())


def _gradcheck(args, pipeline):
    error = pipeline.gradcheck(args.seed)
    print(f"max relative error {error:.3e}")
    if args.out:
        write_manifest(args.out, "gradcheck", pipeline.gradcheck_setup, args.seed, {"max_rel_error": error})
    if error >= GRADCHECK_TOLERANCE:
        logger.error("gradient check failed: %.3e >= %.0e", error, GRADCHECK_TOLERANCE)
        return EXIT_RUNTIME
    return EXIT_OK


def _generate(args, pipeline):
    text = pipeline.generate(args.checkpoint, args.current, args.prior, args.prompt, args.mode,
                             args.max_len)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "generation.json"), "w") as f:
            json.dump({"current": args.current, "prior": args.prior, "prompt": args.prompt,
                       "mode": args.mode, "text": text}, f, indent=2)
        write_manifest(args.out, "generate", vars(args), None)


def _inspect_checkpoint(args, pipeline):
    print(json.dumps(pipeline.inspect_checkpoint(args.checkpoint), indent=2))


COMMANDS = {
    "gen-corpus": _gen_corpus,
    "build-subdatasets": _build_subdatasets,
    "train": _train,
    "eval": _eval,
    "gradcheck": _gradcheck,
    "generate": _generate,
    "inspect-checkpoint": _inspect_checkpoint,
}


def dispatch(argv=None):
    """Run one subcommand; returns the process exit code."""
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (see coca-cxr --help)")
        code = COMMANDS[args.command](args, CocaCxrPipeline())
        return EXIT_OK if code is None else code
    except UsageError as e:
        logger.error("usage error: %s", e)
        return EXIT_USAGE
    except (CocaCxrError, OSError) as e:
        logger.error("error: %s", e)
        return EXIT_RUNTIME


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
