"""
Corpus Storage and Sub-Datasets
-------------------------------
Writes generated pairs to disk (8-bit PGM images with float32 .npy
sidecars, a pairs.jsonl index and a report record file) and builds the four
training sub-datasets:

    1  current image, cleaned report
    2  image pair, full comparative report
    3  image pair, comparison sentences only (+ reversed pairs)
    4  image pair, one scene annotation per record (+ reversed pairs)
"""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageOps

from coca_cxr.corpus_generator.scene_generator import Scene
from coca_cxr.errors import DatasetError
from coca_cxr.report_processor.report_pipeline import (
    clean_report,
    extract_comparisons,
    format_report_record,
    parse_report_record,
    reverse_comparison_text,
)
from coca_cxr.report_processor.scene_annotation import parse_scene_annotation, serialize_scene_annotation

logger = logging.getLogger(__name__)

PAIRS_FILE = "pairs.jsonl"
REPORTS_FILE = "reports.txt"
IMAGE_DIR = "images"
SUBDATASET_KINDS = {1: "clean", 2: "report", 3: "comparison", 4: "annotation"}


def subdataset_path(out_dir, number):
    return os.path.join(out_dir, f"subdataset_{number}.jsonl")


def save_image(path, image):
    """Write `image` (floats in [0, 1]) as 8-bit PGM plus an exact .npy sidecar."""
    image = np.asarray(image, dtype=np.float32)
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path)
    np.save(os.path.splitext(path)[0] + ".npy", image)


def load_image(path, side=None):
    """
    Float image in [0, 1]; the .npy sidecar is preferred when present. With
    `side`, non-square images are padded to a centered square and resized.
    """
    sidecar = os.path.splitext(path)[0] + ".npy"
    if side is None and os.path.exists(sidecar):
        return np.load(sidecar).astype(np.float32)
    if os.path.exists(sidecar):
        image = np.load(sidecar).astype(np.float32)
        if image.shape == (side, side):
            return image
    with Image.open(path) as img:
        img = img.convert("L")
        if side is not None and img.size != (side, side):
            img = ImageOps.pad(img, (side, side), method=Image.Resampling.BILINEAR, color=0)
        return np.asarray(img, dtype=np.float32) / 255.0


@dataclass
class PairRecord:
    """A stored study pair: image paths relative to the corpus directory plus ground truth."""
    pair_id: str
    seed: int
    split: str
    current_path: str
    prior_path: str
    prior_scene: Scene
    current_scene: Scene
    annotations: list
    report: object

    def to_json(self):
        return {
            "pair_id": self.pair_id,
            "seed": self.seed,
            "split": self.split,
            "current": self.current_path,
            "prior": self.prior_path,
            "scenes": {"prior": self.prior_scene.to_dict(), "current": self.current_scene.to_dict()},
            "annotations": [serialize_scene_annotation(a) for a in self.annotations],
            "report": format_report_record(self.pair_id, self.report),
        }

    @classmethod
    def from_json(cls, data):
        _, report = parse_report_record(data["report"])
        return cls(
            pair_id=data["pair_id"],
            seed=int(data["seed"]),
            split=data["split"],
            current_path=data["current"],
            prior_path=data["prior"],
            prior_scene=Scene.from_dict(data["scenes"]["prior"]),
            current_scene=Scene.from_dict(data["scenes"]["current"]),
            annotations=[parse_scene_annotation(a) for a in data["annotations"]],
            report=report,
        )


def write_corpus(pairs, out_dir):
    """Store images, pairs.jsonl and reports.txt; return the PairRecords."""
    image_dir = os.path.join(out_dir, IMAGE_DIR)
    os.makedirs(image_dir, exist_ok=True)
    records = []
    with open(os.path.join(out_dir, PAIRS_FILE), "w") as index, \
            open(os.path.join(out_dir, REPORTS_FILE), "w") as reports:
        for pair in pairs:
            current_path = os.path.join(IMAGE_DIR, f"{pair.pair_id}_current.pgm")
            prior_path = os.path.join(IMAGE_DIR, f"{pair.pair_id}_prior.pgm")
            save_image(os.path.join(out_dir, current_path), pair.current_image)
            save_image(os.path.join(out_dir, prior_path), pair.prior_image)
            record = PairRecord(pair.pair_id, pair.seed, pair.split, current_path, prior_path,
                                pair.prior, pair.current, pair.annotations, pair.report)
            index.write(json.dumps(record.to_json()) + "\n")
            reports.write(format_report_record(pair.pair_id, pair.report) + "\n")
            records.append(record)
    logger.info("✓ Wrote %d pairs to %s", len(records), out_dir)
    return records


def load_pairs(corpus_dir, split=None):
    path = os.path.join(corpus_dir, PAIRS_FILE)
    if not os.path.exists(path):
        raise DatasetError(f"no {PAIRS_FILE} in {corpus_dir}; run gen-corpus first")
    records = []
    with open(path) as f:
        for line in f:
            if line.strip():
                record = PairRecord.from_json(json.loads(line))
                if split is None or record.split == split:
                    records.append(record)
    return records


def _record(study_id, number, text, current, prior, reversed_pair=False):
    return {
        "study_id": study_id,
        "kind": SUBDATASET_KINDS[number],
        "subdataset": number,
        "text": text,
        "current": current,
        "prior": prior,
        "reversed": reversed_pair,
    }


def subdataset_records(record, reverse=True):
    """Sub-dataset records of one stored pair, keyed by sub-dataset number."""
    sid, cur, pri = record.pair_id, record.current_path, record.prior_path
    comparisons = extract_comparisons(record.report)
    out = {
        1: [_record(sid, 1, clean_report(record.report).text(), cur, None)],
        2: [_record(sid, 2, record.report.text(), cur, pri)],
        3: [_record(sid, 3, " ".join(comparisons), cur, pri)],
        4: [_record(f"{sid}_{i}", 4, serialize_scene_annotation(a), cur, pri)
            for i, a in enumerate(record.annotations)],
    }
    if reverse:
        reversed_text = " ".join(reverse_comparison_text(s) for s in comparisons)
        out[3].append(_record(f"{sid}_rev", 3, reversed_text, pri, cur, reversed_pair=True))
        out[4] += [_record(f"{sid}_{i}_rev", 4, serialize_scene_annotation(a.reversed()), pri, cur,
                           reversed_pair=True)
                   for i, a in enumerate(record.annotations)]
    return out


def build_subdatasets(records, out_dir, reverse=True):
    """
    Write subdataset_{1..4}.jsonl from the train-split pairs. Sub-dataset 1 and
    3 texts come from running the report pipeline over the sub-dataset 2 report.
    Returns {number: record count}.
    """
    os.makedirs(out_dir, exist_ok=True)
    counts = {n: 0 for n in SUBDATASET_KINDS}
    files = {n: open(subdataset_path(out_dir, n), "w") for n in SUBDATASET_KINDS}
    try:
        for record in records:
            if record.split != "train":
                continue
            for number, rows in subdataset_records(record, reverse).items():
                for row in rows:
                    files[number].write(json.dumps(row) + "\n")
                counts[number] += len(rows)
    finally:
        for f in files.values():
            f.close()
    logger.info("✓ Wrote 4 sub-dataset files: %s",
                ", ".join(f"{n}: {counts[n]} records" for n in SUBDATASET_KINDS))
    return counts


def load_subdataset(path):
    if not os.path.exists(path):
        raise DatasetError(f"missing sub-dataset file {path}")
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
