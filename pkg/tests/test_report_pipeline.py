import json

import numpy as np
import pytest

from coca_cxr.errors import ConfigurationError
from coca_cxr.report_processor import (
    CONDITIONS,
    DEFAULT_LEXICON,
    ORGANS,
    PROGRESSIONS,
    ComparisonLexicon,
    Report,
    clean_report,
    extract_comparisons,
    flip_progression,
    format_report_record,
    parse_report_record,
    partition_report,
    process_report_file,
    reverse_comparison_text,
)
from coca_cxr.report_processor.grammar import (
    COMPARISON_ONLY_SENTENCES,
    NORMAL_SENTENCES,
    comparison_finding,
    comparison_impression,
    tokenize_words,
)


def grammar_comparisons(n, seed=0):
    rng = np.random.default_rng(seed)
    sentences = []
    for _ in range(n):
        condition = CONDITIONS[rng.integers(len(CONDITIONS))]
        organ = ORGANS[rng.integers(len(ORGANS))]
        label = PROGRESSIONS[rng.integers(len(PROGRESSIONS))]
        status = ("persisting", "new", "resolved")[rng.integers(3)]
        kind = rng.integers(4)
        if kind == 0:
            sentences.append(comparison_finding(condition, organ, label, status))
        elif kind == 1:
            sentences.append(comparison_impression(condition, label, status, variant=int(rng.integers(2))))
        elif kind == 2:
            trend = ("increased", "decreased")[rng.integers(2)]
            sentences.append(f"{condition} at {organ} has {trend} since the prior study.")
        else:
            sentences.append(COMPARISON_ONLY_SENTENCES[rng.integers(len(COMPARISON_ONLY_SENTENCES))])
    return sentences


class TestLexicon:
    def test_flip_map_is_involution(self):
        assert DEFAULT_LEXICON.is_involution()
        assert DEFAULT_LEXICON.flip("new") == "resolved"
        assert DEFAULT_LEXICON.flip("stable") == "stable"

    def test_progression_flip(self):
        assert flip_progression("worsened") == "improved"
        assert flip_progression("unchanged") == "unchanged"

    def test_conflicting_pair_rejected(self):
        with pytest.raises(ConfigurationError):
            ComparisonLexicon(flip_pairs=(("worsened", "improved"), ("worsened", "stable")))


class TestCleaning:
    def test_trend_sentence_rewritten(self):
        cleaned = clean_report(Report(findings=["worsening pleural effusion."]))
        assert cleaned.findings == ["pleural effusion is present."]

    def test_pure_comparison_dropped(self):
        cleaned = clean_report(Report(findings=["mediastinal contours are unchanged."]))
        assert cleaned.findings == []

    def test_resolved_finding_dropped(self):
        cleaned = clean_report(Report(impression=["edema at left lung has resolved."]))
        assert cleaned.impression == []

    def test_report_without_markers_unchanged(self):
        report = Report(indication="chest pain.", findings=list(NORMAL_SENTENCES[:2]),
                        impression=["no acute cardiopulmonary process."])
        assert clean_report(report) == report

    def test_located_sentence_keeps_organ(self):
        cleaned = clean_report(Report(findings=["pneumonia is worsened at right lower lung zone."]))
        assert cleaned.findings == ["pneumonia is present at right lower lung zone."]

    def test_unrecognized_comparison_goes_to_rejects(self):
        rejects = []
        cleaned = clean_report(Report(findings=["pneumonia is slightly worsened."]), rejects=rejects)
        assert cleaned.findings == []
        assert rejects == ["pneumonia is slightly worsened."]

    def test_output_has_no_comparison_terms(self):
        report = Report(findings=grammar_comparisons(200, seed=1), impression=list(NORMAL_SENTENCES))
        cleaned = clean_report(report)
        terms = DEFAULT_LEXICON.comparison_terms
        for sentence in cleaned.findings + cleaned.impression:
            assert not terms.intersection(tokenize_words(sentence)), sentence


class TestExtraction:
    def test_only_marker_sentences_in_order(self):
        report = Report(
            indication="fever and cough.",
            findings=["the lungs are clear.", "new edema at left lung.", "osseous structures are unremarkable."],
            impression=["stable pneumothorax.", "no acute cardiopulmonary process."],
        )
        assert extract_comparisons(report) == ["new edema at left lung.", "stable pneumothorax."]

    def test_clean_report_has_no_comparisons(self):
        assert extract_comparisons(Report(findings=list(NORMAL_SENTENCES))) == []

    def test_partition_covers_every_sentence(self):
        sentences = grammar_comparisons(100, seed=2) + list(NORMAL_SENTENCES) + ["pneumonia is slightly worsened."]
        report = Report(findings=sentences)
        _, partition = partition_report(report)
        buckets = [partition.kept, [s for s, _ in partition.rewritten], partition.dropped, partition.rejects]
        assert sum(len(b) for b in buckets) == len(sentences)
        assert sorted(s for b in buckets for s in b) == sorted(sentences)
        assert sorted(extract_comparisons(report)) == sorted(partition.comparisons)


class TestReversal:
    def test_flips_progression_word(self):
        assert reverse_comparison_text("improved pneumonia.") == "worsened pneumonia."

    def test_new_becomes_resolved(self):
        assert reverse_comparison_text("new mild pulmonary edema.") == "mild pulmonary edema has resolved."

    def test_resolved_becomes_new(self):
        assert reverse_comparison_text("Mild pulmonary edema has resolved.") == "New mild pulmonary edema."

    def test_single_pass_swap(self):
        assert (reverse_comparison_text("pneumonia has increased and edema has decreased.")
                == "pneumonia has decreased and edema has increased.")

    def test_fixed_points_untouched(self):
        sentence = "lines and tubes are unchanged since the previous exam."
        assert reverse_comparison_text(sentence) == sentence

    def test_involution_on_grammar_sentences(self):
        for sentence in grammar_comparisons(1000):
            assert reverse_comparison_text(reverse_comparison_text(sentence)) == sentence


class TestRecords:
    def test_parse_sections(self):
        study_id, report = parse_report_record(
            "s7\tINDICATION: chest pain. FINDINGS: new edema at left lung. the lungs are clear. "
            "IMPRESSION: new edema.")
        assert study_id == "s7"
        assert report.indication == "chest pain."
        assert report.findings == ["new edema at left lung.", "the lungs are clear."]
        assert report.impression == ["new edema."]

    def test_missing_sections_are_empty(self):
        study_id, report = parse_report_record("FINDINGS: the lungs are clear.")
        assert study_id is None
        assert report == Report(findings=["the lungs are clear."])

    def test_format_then_parse(self):
        report = Report("evaluate for infection.", ["pneumonia is present at left lung."], ["pneumonia is present."])
        assert parse_report_record(format_report_record("a1", report)) == ("a1", report)

    def test_process_report_file(self, tmp_path):
        src = tmp_path / "reports.txt"
        src.write_text(
            "s1\tINDICATION: chest pain. FINDINGS: worsening pleural effusion. "
            "IMPRESSION: pneumonia is slightly worsened.\n"
            "\n"
            "s2\tFINDINGS: the lungs are clear. IMPRESSION: no acute cardiopulmonary process.\n")
        dst = tmp_path / "out.jsonl"
        counts = process_report_file(str(src), str(dst))
        assert counts == {"clean": 2, "comparison": 1, "reject": 1}

        rows = [json.loads(line) for line in dst.read_text().splitlines()]
        assert rows[0] == {"study_id": "s1", "text": "pleural effusion is present.", "kind": "clean"}
        assert {"study_id": "s1", "text": "worsening pleural effusion. pneumonia is slightly worsened.",
                "kind": "comparison"} in rows
        assert rows[-1] == {"study_id": "s2", "text": "the lungs are clear. no acute cardiopulmonary process.",
                            "kind": "clean"}
