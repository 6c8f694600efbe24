"""
Held-Out Evaluation
-------------------
Runs a trained model over held-out study pairs: progression classification
by constrained decoding, swap-order consistency, prompted box detection
scored by IoU, and token F1 of generated reports. Results go to a
(metric, key, value) CSV and a plain-text summary.
"""

import csv
import logging
import os
from dataclasses import dataclass, field

import torch
from tqdm import tqdm

from coca_cxr.corpus_generator.subdatasets import load_image
from coca_cxr.errors import ConfigurationError, MissingClassError
from coca_cxr.evaluation.metrics import (
    box_iou,
    macro_accuracy,
    per_condition_macro_accuracy,
    swap_consistency,
    token_f1,
)
from coca_cxr.model.vocabulary import BOS_ID
from coca_cxr.report_processor.lexicon import CONDITIONS, PROGRESSIONS, flip_progression
from coca_cxr.report_processor.scene_annotation import parse_scene_annotations

logger = logging.getLogger(__name__)

RESULTS_FILE = "eval_results.csv"
SUMMARY_FILE = "summary.txt"


def label_token_ids(vocab):
    return [vocab.token_id(label) for label in PROGRESSIONS]


def classification_prompt(vocab, condition):
    """<bos> followed by "[condition] is"."""
    if condition not in CONDITIONS:
        raise ConfigurationError(f"unknown condition '{condition}'")
    return [BOS_ID] + vocab.encode(condition) + vocab.encode("is")


@torch.no_grad()
def classify_from_memory(model, vocab, memory, condition):
    prompt = classification_prompt(vocab, condition)
    ids = model.generate_from_memory(memory, prompt, len(prompt) + 1, mode="constrained",
                                     choices=label_token_ids(vocab))
    return vocab.tokens[ids[-1]]


@torch.no_grad()
def classify_progression(model, vocab, current, prior, condition):
    """Most probable of worsened/unchanged/improved after "[condition] is" for the pair."""
    memory, _ = model.encode_pair(current, prior)
    return classify_from_memory(model, vocab, memory[:1], condition)


@torch.no_grad()
def swap_consistency_rate(model, vocab, items):
    """
    items: iterable of (current, prior, condition).
    Fraction where the swapped-pair prediction equals the flip of the original one.
    """
    original, swapped = [], []
    for current, prior, condition in items:
        original.append(classify_progression(model, vocab, current, prior, condition))
        swapped.append(classify_progression(model, vocab, prior, current, condition))
    return swap_consistency(original, swapped)


@dataclass
class DetectionRow:
    condition: str
    organ: str
    iou_current: float
    iou_prior: float
    matched: bool


@dataclass
class DetectionResult:
    rows: list = field(default_factory=list)
    generations: list = field(default_factory=list)
    matched: int = 0
    gold_count: int = 0
    parsed: int = 0       # non-empty generations that parsed completely

    @property
    def matched_rate(self):
        return self.matched / self.gold_count if self.gold_count else 0.0

    @property
    def parse_rate(self):
        nonempty = sum(1 for g in self.generations if g.strip())
        return self.parsed / nonempty if nonempty else 0.0


def score_detections(generations, golds):
    """
    Parse generated annotation texts and match them to `golds` on (condition, organ).
    Unparseable or unmatched predictions score IoU 0; empty generations add no rows.
    """
    gold_by_key = {g.key: g for g in golds}
    result = DetectionResult(generations=list(generations), gold_count=len(gold_by_key))
    seen = set()
    for text in result.generations:
        if not text.strip():
            continue
        predictions, errors = parse_scene_annotations(text)
        if predictions and not errors:
            result.parsed += 1
        if not predictions:
            result.rows.append(DetectionRow("unparsed", "unparsed", 0.0, 0.0, False))
            continue
        for pred in predictions:
            gold = gold_by_key.get(pred.key)
            if gold is None:
                result.rows.append(DetectionRow(pred.condition, pred.organ, 0.0, 0.0, False))
                continue
            result.rows.append(DetectionRow(gold.condition, gold.organ,
                                            box_iou(pred.box_current, gold.box_current),
                                            box_iou(pred.box_prior, gold.box_prior), True))
            seen.add(gold.key)
    result.matched = len(seen)
    return result


@torch.no_grad()
def generate_annotation(model, vocab, memory, condition, max_len):
    """Condition words as the prompt, a constrained progression word, then greedy decoding."""
    prefix = [BOS_ID] + vocab.encode(condition)
    ids = model.generate_from_memory(memory, prefix, len(prefix) + 1, mode="constrained",
                                     choices=label_token_ids(vocab))
    ids = model.generate_from_memory(memory, ids, max_len, mode="greedy")
    return vocab.decode(ids)


@torch.no_grad()
def detect_and_score(model, vocab, current, prior, golds, max_len=None):
    max_len = max_len or model.config.max_text_len
    memory, _ = model.encode_pair(current, prior)
    texts = [generate_annotation(model, vocab, memory[:1], g.condition, max_len) for g in golds]
    return score_detections(texts, golds)


@torch.no_grad()
def generate_report(model, vocab, current, prior, max_len=None):
    max_len = max_len or model.config.max_text_len
    ids = model.generate_text(current, prior, [BOS_ID], max_len, mode="greedy")
    return vocab.decode(ids)


@dataclass
class EvalSummary:
    rows: list            # (metric, key, value)
    pair_count: int
    results_path: str = None
    summary_path: str = None

    def value(self, metric, key):
        for m, k, v in self.rows:
            if m == metric and k == key:
                return v
        raise KeyError((metric, key))


class HeldOutEvaluator:
    def __init__(self, model, vocab, corpus_dir):
        """Bind a model and vocabulary to the corpus its pair records point into."""
        self.model = model
        self.vocab = vocab
        self.corpus_dir = corpus_dir
        self.side = model.config.image_side

        # Which protocols to run, all on by default
        self.protocols = {
            "classification": True,   # constrained "[condition] is" decoding
            "swap": True,             # same prompts on the swapped pair
            "detection": True,        # prompted annotation text scored by IoU
            "report": True,           # greedy report vs. the gold report
        }

    def _images(self, record):
        current = load_image(os.path.join(self.corpus_dir, record.current_path), self.side)
        prior = load_image(os.path.join(self.corpus_dir, record.prior_path), self.side)
        return current, prior

    def evaluate(self, records, out_dir=None, progress=True):
        self.model.eval()
        cls_rows, swapped = [], []
        detections = DetectionResult()
        f1s = []

        for record in tqdm(records, desc="Evaluating", disable=not progress, leave=False):
            current, prior = self._images(record)
            with torch.no_grad():
                memory, _ = self.model.encode_pair(current, prior)
                swap_memory = None
                if self.protocols["swap"]:
                    swap_memory, _ = self.model.encode_pair(prior, current)
                for gold in record.annotations:
                    if self.protocols["classification"]:
                        pred = classify_from_memory(self.model, self.vocab, memory, gold.condition)
                        cls_rows.append((gold.condition, pred, gold.progression))
                        if swap_memory is not None:
                            swapped.append(classify_from_memory(self.model, self.vocab, swap_memory,
                                                                gold.condition))
                if self.protocols["detection"] and record.annotations:
                    texts = [generate_annotation(self.model, self.vocab, memory, g.condition,
                                                 self.model.config.max_text_len)
                             for g in record.annotations]
                    scored = score_detections(texts, record.annotations)
                    detections.rows += scored.rows
                    detections.generations += scored.generations
                    detections.matched += scored.matched
                    detections.gold_count += scored.gold_count
                    detections.parsed += scored.parsed
                if self.protocols["report"]:
                    text = self.vocab.decode(self.model.generate_from_memory(
                        memory, [BOS_ID], self.model.config.max_text_len))
                    f1s.append(token_f1(text, record.report.text()))

        rows = self._classification_rows(cls_rows, swapped)
        rows += self._detection_rows(detections)
        if f1s:
            for name in ("precision", "recall", "f1"):
                rows.append(("report_token", name, sum(getattr(s, name) for s in f1s) / len(f1s)))

        summary = EvalSummary(rows, len(records))
        if out_dir:
            self.write(summary, out_dir)
        return summary

    def _classification_rows(self, cls_rows, swapped):
        rows = []
        if not cls_rows:
            return rows
        preds = [p for _, p, _ in cls_rows]
        golds = [g for _, _, g in cls_rows]
        present = tuple(c for c in PROGRESSIONS if c in golds)
        try:
            report = macro_accuracy(preds, golds)
        except MissingClassError as e:
            logger.warning("%s; macro-accuracy covers %s only", e, ", ".join(present))
            report = macro_accuracy(preds, golds, present)
        for label, recall in report.per_class.items():
            rows.append(("accuracy", label, recall))
        rows.append(("accuracy", "macro", report.macro))
        for condition, macro in per_condition_macro_accuracy(cls_rows).items():
            rows.append(("condition_macro_accuracy", condition, macro))
        if swapped:
            rows.append(("swap_consistency", "all", swap_consistency(preds, swapped)))
            # Flip symmetry of the gold labels themselves, exactly 1 on generator data
            rows.append(("swap_consistency", "gold",
                         swap_consistency(golds, [flip_progression(g) for g in golds])))
        return rows

    def _detection_rows(self, detections):
        rows = []
        if not detections.gold_count:
            return rows
        by_organ = {}
        for row in detections.rows:
            if row.matched:
                by_organ.setdefault(row.organ, []).append(row)
        for organ in sorted(by_organ):
            matched = by_organ[organ]
            rows.append(("iou_current", organ, sum(r.iou_current for r in matched) / len(matched)))
            rows.append(("iou_prior", organ, sum(r.iou_prior for r in matched) / len(matched)))
        scored = detections.rows
        if scored:
            rows.append(("iou_current", "all", sum(r.iou_current for r in scored) / len(scored)))
            rows.append(("iou_prior", "all", sum(r.iou_prior for r in scored) / len(scored)))
        rows.append(("detection", "matched_rate", detections.matched_rate))
        rows.append(("detection", "parse_rate", detections.parse_rate))
        return rows

    def write(self, summary, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        summary.results_path = os.path.join(out_dir, RESULTS_FILE)
        with open(summary.results_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(("metric", "key", "value"))
            writer.writerows((m, k, f"{v:.6f}") for m, k, v in summary.rows)

        summary.summary_path = os.path.join(out_dir, SUMMARY_FILE)
        lines = [f"Held-out pairs: {summary.pair_count}"]
        for metric, key, value in summary.rows:
            lines.append(f"{metric:<26} {key:<28} {value:.4f}")
        with open(summary.summary_path, "w") as f:
            f.write("\n".join(lines) + "\n")
        logger.info("✓ Evaluation results written to %s", summary.results_path)
        return summary
