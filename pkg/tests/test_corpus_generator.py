import os
from collections import Counter

import numpy as np
import pytest

from coca_cxr.corpus_generator import (
    GenConfig,
    Lesion,
    Scene,
    StudyPreviewRenderer,
    annotate,
    derive_progression_label,
    generate_pairs,
    generate_study_pair,
    load_image,
    load_pairs,
    load_subdataset,
    render_scene,
    save_image,
    subdataset_path,
)
from coca_cxr.corpus_generator.atlas import anatomy_template
from coca_cxr.errors import ConfigurationError, LabelDerivationError
from coca_cxr.report_processor import (
    CONDITIONS,
    DEFAULT_LEXICON,
    PROGRESSIONS,
    clean_report,
    flip_progression,
    parse_report_record,
    parse_scene_annotation,
)
from coca_cxr.report_processor.grammar import split_sentences, tokenize_words


def lesion(sigma=0.05, intensity=0.5, condition="pneumonia", organ="left lung", center=(0.7, 0.5)):
    return Lesion(condition, organ, center, sigma, intensity)


class TestRender:
    def test_empty_scene_is_background(self):
        image = render_scene(Scene([]), 32, noise_std=0.0)
        assert np.allclose(image, anatomy_template(32), atol=1e-6)

    def test_lesion_peak_adds_intensity(self):
        side = 64
        center = ((19 + 0.5) / side, (32 + 0.5) / side)
        background = render_scene(Scene([]), side, noise_std=0.0)
        image = render_scene(Scene([lesion(0.05, 0.5, center=center)]), side, noise_std=0.0)
        assert abs(float(image[32, 19] - background[32, 19]) - 0.5) < 1e-6

    def test_same_seed_same_image(self):
        scene = Scene([lesion()], noise_seed=11)
        assert np.array_equal(render_scene(scene, 32), render_scene(scene, 32))

    def test_values_are_clipped(self):
        image = render_scene(Scene([lesion(0.2, 1.0), lesion(0.2, 1.0, condition="edema")]), 32)
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_side_too_small(self):
        with pytest.raises(ConfigurationError):
            render_scene(Scene([]), 8)


class TestLabels:
    def test_identical_lesions_unchanged(self):
        assert derive_progression_label(lesion(), lesion()) == "unchanged"

    def test_new_lesion_worsened(self):
        assert derive_progression_label(None, lesion()) == "worsened"

    def test_resolved_lesion_improved(self):
        assert derive_progression_label(lesion(), None) == "improved"

    def test_doubling_extent_worsens(self):
        assert derive_progression_label(lesion(0.05), lesion(0.10), epsilon=0.15) == "worsened"
        assert derive_progression_label(lesion(0.10), lesion(0.05), epsilon=0.15) == "improved"

    def test_small_change_within_epsilon(self):
        assert derive_progression_label(lesion(0.10), lesion(0.105)) == "unchanged"

    def test_mismatched_lesions(self):
        with pytest.raises(LabelDerivationError):
            derive_progression_label(lesion(), lesion(organ="right lung"))
        with pytest.raises(LabelDerivationError):
            derive_progression_label(None, None)


class TestStudyPairs:
    @pytest.fixture(scope="class")
    def pairs(self):
        return generate_pairs(1000, GenConfig(image_side=16, seed=5))

    def test_label_histogram_matches_balance(self, pairs):
        labels = Counter(a.progression for p in pairs for a in p.annotations)
        total = sum(labels.values())
        for label in PROGRESSIONS:
            assert abs(labels[label] / total - 1 / 3) <= 0.03

    def test_condition_histogram_matches_balance(self, pairs):
        conditions = Counter(a.condition for p in pairs for a in p.annotations)
        total = sum(conditions.values())
        for condition in CONDITIONS:
            assert abs(conditions[condition] / total - 1 / len(CONDITIONS)) <= 0.03

    def test_labels_rederive_from_scenes(self, pairs):
        for pair in pairs[:200]:
            annotations, statuses = annotate(pair.prior, pair.current)
            assert annotations == pair.annotations
            assert statuses == pair.statuses

    def test_comparison_texts_carry_markers(self, pairs):
        terms = DEFAULT_LEXICON.comparison_terms
        for pair in pairs[:200]:
            sentences = split_sentences(pair.texts()[3])
            assert sentences
            for sentence in sentences:
                assert terms.intersection(tokenize_words(sentence)), sentence

    def test_cleaning_full_report_gives_clean_text(self, pairs):
        for pair in pairs[:200]:
            texts = pair.texts()
            _, report = parse_report_record(f"FINDINGS: {' '.join(pair.report.findings)} "
                                            f"IMPRESSION: {' '.join(pair.report.impression)}")
            assert report.text() == texts[2]
            assert clean_report(report).text() == texts[1]

    def test_generation_is_deterministic(self):
        a = generate_study_pair(42, GenConfig(image_side=16), index=3)
        b = generate_study_pair(42, GenConfig(image_side=16), index=3)
        assert np.array_equal(a.current_image, b.current_image)
        assert np.array_equal(a.prior_image, b.prior_image)
        assert a.annotations == b.annotations
        assert a.report == b.report

    def test_workers_do_not_change_pairs(self):
        config = GenConfig(image_side=16, seed=9)
        serial = generate_pairs(6, config)
        threaded = generate_pairs(6, config, workers=3)
        for a, b in zip(serial, threaded):
            assert np.array_equal(a.current_image, b.current_image)
            assert a.annotations == b.annotations

    def test_invalid_balance(self):
        with pytest.raises(ConfigurationError):
            GenConfig(label_balance={"worsened": 0.5, "improved": 0.2})


class TestSubdatasets:
    def test_record_counts(self, tiny_corpus):
        train = [r for r in tiny_corpus["records"] if r.split == "train"]
        n_annotations = sum(len(r.annotations) for r in train)
        rows = {k: load_subdataset(subdataset_path(tiny_corpus["dir"], k)) for k in (1, 2, 3, 4)}
        assert len(rows[1]) == len(rows[2]) == len(train)
        assert len(rows[3]) == 2 * len(train)
        assert len(rows[4]) == 2 * n_annotations

    def test_subdataset_one_has_no_prior(self, tiny_corpus):
        for row in load_subdataset(subdataset_path(tiny_corpus["dir"], 1)):
            assert row["prior"] is None
            assert not DEFAULT_LEXICON.comparison_terms.intersection(tokenize_words(row["text"]))

    def test_reversed_annotations(self, tiny_corpus):
        rows = {row["study_id"]: row for row in load_subdataset(subdataset_path(tiny_corpus["dir"], 4))}
        for study_id, row in rows.items():
            if row["reversed"]:
                continue
            rev = rows[f"{study_id}_rev"]
            a, b = parse_scene_annotation(row["text"]), parse_scene_annotation(rev["text"])
            assert b.progression == flip_progression(a.progression)
            assert (b.box_current, b.box_prior) == (a.box_prior, a.box_current)
            assert (rev["current"], rev["prior"]) == (row["prior"], row["current"])

    def test_pairs_reload(self, tiny_corpus):
        records = load_pairs(tiny_corpus["dir"])
        assert [r.pair_id for r in records] == [r.pair_id for r in tiny_corpus["records"]]
        assert records[0].annotations == tiny_corpus["records"][0].annotations
        held_out = load_pairs(tiny_corpus["dir"], split="test")
        assert all(r.split == "test" for r in held_out)

    def test_stored_images_match(self, tiny_corpus):
        record, pair = tiny_corpus["records"][0], tiny_corpus["pairs"][0]
        image = load_image(os.path.join(tiny_corpus["dir"], record.current_path), side=16)
        assert np.array_equal(image, pair.current_image)


def test_pgm_without_sidecar(tmp_path):
    image = np.linspace(0, 1, 16 * 16, dtype=np.float32).reshape(16, 16)
    path = str(tmp_path / "x.pgm")
    save_image(path, image)
    os.remove(str(tmp_path / "x.npy"))
    assert np.abs(load_image(path) - image).max() <= 0.5 / 255 + 1e-6
    assert load_image(path, side=32).shape == (32, 32)


def test_preview_sheet(tmp_path):
    pairs = generate_pairs(2, GenConfig(image_side=16))
    out = StudyPreviewRenderer().render(pairs, str(tmp_path / "preview.png"))
    assert os.path.exists(out)
    assert StudyPreviewRenderer().render([], str(tmp_path / "empty.png")) is None
