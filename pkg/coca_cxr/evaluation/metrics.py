"""
Evaluation Metrics
------------------
Model-free scoring: per-class and macro accuracy over progression labels,
swap consistency of paired predictions, box IoU and multiset token F1.
"""

from collections import Counter
from dataclasses import dataclass

from coca_cxr.errors import EmptyReferenceError, MissingClassError, ShapeMismatchError
from coca_cxr.report_processor.grammar import tokenize_words
from coca_cxr.report_processor.lexicon import PROGRESSIONS, flip_progression


@dataclass(frozen=True)
class AccuracyReport:
    per_class: dict   # label -> recall
    macro: float
    count: int


def macro_accuracy(preds, golds, classes=PROGRESSIONS):
    """Mean over `classes` of per-class recall; every class must occur in `golds`."""
    preds, golds = list(preds), list(golds)
    if len(preds) != len(golds):
        raise ShapeMismatchError(f"{len(preds)} predictions for {len(golds)} gold labels")
    totals = Counter(golds)
    missing = [c for c in classes if totals[c] == 0]
    if missing:
        raise MissingClassError(f"gold labels contain no examples of {missing}")
    hits = Counter(g for p, g in zip(preds, golds) if p == g)
    per_class = {c: hits[c] / totals[c] for c in classes}
    return AccuracyReport(per_class, sum(per_class.values()) / len(classes), len(golds))


def per_condition_macro_accuracy(rows, classes=PROGRESSIONS):
    """
    rows: iterable of (condition, pred, gold).
    Returns {condition: macro} for conditions whose golds cover every class,
    plus the mean of those under the key "mean".
    """
    grouped = {}
    for condition, pred, gold in rows:
        grouped.setdefault(condition, ([], []))
        grouped[condition][0].append(pred)
        grouped[condition][1].append(gold)
    result = {}
    for condition in sorted(grouped):
        preds, golds = grouped[condition]
        try:
            result[condition] = macro_accuracy(preds, golds, classes).macro
        except MissingClassError:
            continue
    if result:
        result["mean"] = sum(result.values()) / len(result)
    return result


def swap_consistency(original, swapped):
    """Fraction of positions where the swapped-pair prediction is the flip of the original."""
    original, swapped = list(original), list(swapped)
    if len(original) != len(swapped):
        raise ShapeMismatchError("original and swapped prediction lists differ in length")
    if not original:
        return 0.0
    agree = sum(1 for a, b in zip(original, swapped) if b == flip_progression(a))
    return agree / len(original)


def box_iou(a, b):
    a.check()
    b.check()
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class TokenScore:
    precision: float
    recall: float
    f1: float


def token_f1(pred_text, gold_text):
    """Multiset overlap of grammar tokens; an empty prediction scores zero."""
    gold = Counter(tokenize_words(gold_text))
    if not gold:
        raise EmptyReferenceError("token_f1 needs a non-empty reference text")
    pred = Counter(tokenize_words(pred_text))
    overlap = sum((pred & gold).values())
    if overlap == 0:
        return TokenScore(0.0, 0.0, 0.0)
    precision = overlap / sum(pred.values())
    recall = overlap / sum(gold.values())
    return TokenScore(precision, recall, 2 * precision * recall / (precision + recall))
