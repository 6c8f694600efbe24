import csv
import os
from dataclasses import replace

import pytest

from coca_cxr.errors import ConfigurationError
from coca_cxr.evaluation import (
    HeldOutEvaluator,
    classification_prompt,
    classify_progression,
    detect_and_score,
    generate_annotation,
    generate_report,
    score_detections,
    swap_consistency_rate,
)
from coca_cxr.model import BOS_ID
from coca_cxr.report_processor import (
    PROGRESSIONS,
    Box,
    SceneAnnotation,
    flip_progression,
    serialize_scene_annotation,
)
from coca_cxr.report_processor.grammar import tokenize_words

GOLDS = [
    SceneAnnotation("pneumonia", "worsened", "left lower lung zone", Box(0.55, 0.85, 0.50, 0.80),
                    Box(0.60, 0.80, 0.55, 0.75)),
    SceneAnnotation("edema", "improved", "right lung", Box(0.10, 0.50, 0.20, 0.80),
                    Box(0.05, 0.55, 0.15, 0.85)),
]


class TestScoreDetections:
    def test_oracle_text_scores_one(self):
        result = score_detections([serialize_scene_annotation(g) for g in GOLDS], GOLDS)
        assert [r.iou_current for r in result.rows] == [pytest.approx(1.0)] * 2
        assert [r.iou_prior for r in result.rows] == [pytest.approx(1.0)] * 2
        assert result.matched_rate == 1.0
        assert result.parse_rate == 1.0

    def test_empty_generation(self):
        result = score_detections(["", "   "], GOLDS)
        assert result.rows == []
        assert result.matched_rate == 0.0

    def test_unparseable_generation_scores_zero(self):
        result = score_detections(["pneumonia is present."], GOLDS)
        assert len(result.rows) == 1
        assert result.rows[0].iou_current == 0.0 and not result.rows[0].matched
        assert result.parse_rate == 0.0

    def test_unmatched_prediction_scores_zero(self):
        wrong_organ = SceneAnnotation("pneumonia", "worsened", "right lung", Box(0.1, 0.2, 0.1, 0.2),
                                      Box(0.1, 0.2, 0.1, 0.2))
        result = score_detections([serialize_scene_annotation(wrong_organ)], GOLDS)
        assert result.rows[0].matched is False
        assert result.rows[0].iou_prior == 0.0
        assert result.matched_rate == 0.0

    def test_shifted_prediction(self):
        gold = SceneAnnotation("edema", "unchanged", "left lung", Box(0.0, 0.5, 0.0, 0.5), Box(0.0, 0.5, 0.0, 0.5))
        shifted = SceneAnnotation("edema", "unchanged", "left lung", Box(0.25, 0.75, 0.25, 0.75),
                                  Box(0.0, 0.5, 0.0, 0.5))
        result = score_detections([serialize_scene_annotation(shifted)], [gold])
        assert result.rows[0].iou_current == pytest.approx(1 / 7)
        assert result.rows[0].iou_prior == pytest.approx(1.0)

    def test_progression_does_not_affect_matching(self):
        flipped = [serialize_scene_annotation(replace(g, progression=flip_progression(g.progression)))
                   for g in GOLDS]
        assert score_detections(flipped, GOLDS).matched == 2


class TestUntrainedModel:
    def test_classification_is_a_progression_label(self, tiny_model, vocab, image_pair):
        for condition in ("pneumonia", "pleural effusion"):
            assert classify_progression(tiny_model, vocab, *image_pair, condition) in PROGRESSIONS

    def test_prompt_layout(self, vocab):
        prompt = classification_prompt(vocab, "pleural effusion")
        assert prompt == [BOS_ID, vocab.token_id("pleural"), vocab.token_id("effusion"), vocab.token_id("is")]
        with pytest.raises(ConfigurationError):
            classification_prompt(vocab, "atelectasis")

    def test_swap_rate_is_a_fraction(self, tiny_model, vocab, image_pair):
        rate = swap_consistency_rate(tiny_model, vocab, [(*image_pair, "edema"), (*image_pair, "pneumonia")])
        assert rate in (0.0, 0.5, 1.0)

    def test_generated_annotation_starts_with_prompt(self, tiny_model, vocab, image_pair):
        memory, _ = tiny_model.encode_pair(*image_pair)
        text = generate_annotation(tiny_model, vocab, memory, "edema", 20)
        words = tokenize_words(text)
        assert words[0] == "edema"
        assert words[1] in PROGRESSIONS

    def test_detect_and_score_rows(self, tiny_model, vocab, image_pair):
        result = detect_and_score(tiny_model, vocab, *image_pair, GOLDS, max_len=24)
        assert len(result.generations) == len(GOLDS)
        assert 0.0 <= result.matched_rate <= 1.0
        for row in result.rows:
            assert 0.0 <= row.iou_current <= 1.0

    def test_report_is_text(self, tiny_model, vocab, image_pair):
        assert isinstance(generate_report(tiny_model, vocab, *image_pair, max_len=10), str)


def test_held_out_evaluation_writes_results(tiny_model, vocab, tiny_corpus, tmp_path):
    records = [r for r in tiny_corpus["records"] if r.split == "test"][:4]
    evaluator = HeldOutEvaluator(tiny_model, vocab, tiny_corpus["dir"])
    summary = evaluator.evaluate(records, str(tmp_path), progress=False)

    assert summary.pair_count == len(records)
    assert 0.0 <= summary.value("accuracy", "macro") <= 1.0
    assert summary.value("swap_consistency", "gold") == 1.0
    assert 0.0 <= summary.value("detection", "matched_rate") <= 1.0
    assert 0.0 <= summary.value("report_token", "f1") <= 1.0

    with open(os.path.join(str(tmp_path), "eval_results.csv")) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["metric", "key", "value"]
    assert len(rows) == len(summary.rows) + 1
    assert os.path.exists(summary.summary_path)


def test_protocols_can_be_switched_off(tiny_model, vocab, tiny_corpus):
    records = [r for r in tiny_corpus["records"] if r.split == "test"][:2]
    evaluator = HeldOutEvaluator(tiny_model, vocab, tiny_corpus["dir"])
    evaluator.protocols.update(detection=False, report=False, swap=False)
    summary = evaluator.evaluate(records, progress=False)
    assert {m for m, _, _ in summary.rows} <= {"accuracy", "condition_macro_accuracy"}
    assert summary.results_path is None

