"""
Scene Annotations
-----------------
Structured "[condition] [progression] at [organ]" statements with current and
prior boxes, and their exact text template:

    pneumonia worsened at left lower lung zone, coordinates for current image
    is [0.10,0.45,0.55,0.90], coordinates for previous image is [0.12,0.40,0.58,0.88].
"""

import re
from dataclasses import dataclass

from coca_cxr.errors import (
    AnnotationParseError,
    BoxFormatError,
    BoxOrderingError,
    DegenerateBoxError,
    UnknownConditionError,
    UnknownOrganError,
    UnknownProgressionError,
)
from coca_cxr.report_processor.grammar import split_sentences
from coca_cxr.report_processor.lexicon import CONDITIONS, ORGANS, PROGRESSIONS, flip_progression


@dataclass(frozen=True)
class Box:
    """Normalized axis-aligned box, stored in the [x1, x2, y1, y2] order of the template."""
    x1: float
    x2: float
    y1: float
    y2: float

    def check(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DegenerateBoxError(f"degenerate box {self.as_list()}")
        return self

    @property
    def area(self):
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self):
        return [self.x1, self.x2, self.y1, self.y2]

    def rounded(self):
        return Box(*(round(v, 2) for v in self.as_list()))

    def format(self):
        return "[" + ",".join(f"{v:.2f}" for v in self.as_list()) + "]"


@dataclass(frozen=True)
class SceneAnnotation:
    condition: str
    progression: str
    organ: str
    box_current: Box
    box_prior: Box

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise UnknownConditionError(f"unknown condition '{self.condition}'")
        if self.progression not in PROGRESSIONS:
            raise UnknownProgressionError(f"unknown progression '{self.progression}'")
        if self.organ not in ORGANS:
            raise UnknownOrganError(f"unknown organ '{self.organ}'")
        for box in (self.box_current, self.box_prior):
            if not all(0.0 <= v <= 1.0 for v in box.as_list()):
                raise BoxFormatError(f"box {box.as_list()} outside [0, 1]")
            if not (box.x1 < box.x2 and box.y1 < box.y2):
                raise BoxOrderingError(f"box {box.as_list()} violates x1<x2, y1<y2")

    @property
    def key(self):
        return (self.condition, self.organ)

    def reversed(self):
        """The annotation of the swapped image pair."""
        return SceneAnnotation(self.condition, flip_progression(self.progression), self.organ,
                               self.box_prior, self.box_current)


def serialize_scene_annotation(a):
    return (f"{a.condition} {a.progression} at {a.organ}, "
            f"coordinates for current image is {a.box_current.format()}, "
            f"coordinates for previous image is {a.box_prior.format()}.")


def _alternation(options):
    # Longest first so "left lung" never shadows "left lower lung zone"
    ordered = sorted(options, key=len, reverse=True)
    return "|".join(r"\s+".join(map(re.escape, o.split())) for o in ordered)


_WS = re.compile(r"\s*")
_CONDITION = re.compile(rf"(?:{_alternation(CONDITIONS)})\b")
_PROGRESSION = re.compile(rf"\s+({_alternation(PROGRESSIONS)})\b")
_AT = re.compile(r"\s+at\s+")
_ORGAN = re.compile(rf"(?:{_alternation(ORGANS)})\b")
_CURRENT = re.compile(r"\s*,\s*coordinates\s+for\s+current\s+image\s+is\s*")
_PREVIOUS = re.compile(r"\s*,\s*coordinates\s+for\s+previous\s+image\s+is\s*")
_NUMBER = r"\s*(-?\d+(?:\.\d+)?)\s*"
_BOX = re.compile(rf"\[{_NUMBER},{_NUMBER},{_NUMBER},{_NUMBER}\]")
_END = re.compile(r"\s*\.?\s*$")


def _normalize(phrase):
    return " ".join(phrase.split())


def _parse_box(s, pos):
    m = _BOX.match(s, pos)
    if not m:
        raise BoxFormatError("malformed box, expected [x1,x2,y1,y2]", pos)
    values = [float(v) for v in m.groups()]
    if not all(0.0 <= v <= 1.0 for v in values):
        raise BoxFormatError(f"box coordinates {values} outside [0, 1]", pos)
    box = Box(*values)
    if not (box.x1 < box.x2 and box.y1 < box.y2):
        raise BoxOrderingError(f"box {values} violates x1<x2, y1<y2", pos)
    return box, m.end()


def parse_scene_annotation(s):
    """Parse one annotation sentence; raises a typed AnnotationParseError on failure."""
    pos = _WS.match(s).end()

    m = _CONDITION.match(s, pos)
    if not m:
        raise UnknownConditionError("unknown condition", pos)
    condition, pos = _normalize(m.group(0)), m.end()

    m = _PROGRESSION.match(s, pos)
    if not m:
        raise UnknownProgressionError("unknown progression", pos)
    progression, pos = m.group(1), m.end()

    m = _AT.match(s, pos)
    if not m:
        raise AnnotationParseError("expected 'at'", pos)
    pos = m.end()

    m = _ORGAN.match(s, pos)
    if not m:
        raise UnknownOrganError("unknown organ", pos)
    organ, pos = _normalize(m.group(0)), m.end()

    m = _CURRENT.match(s, pos)
    if not m:
        raise AnnotationParseError("expected ', coordinates for current image is'", pos)
    box_current, pos = _parse_box(s, m.end())

    m = _PREVIOUS.match(s, pos)
    if not m:
        raise AnnotationParseError("expected ', coordinates for previous image is'", pos)
    box_prior, pos = _parse_box(s, m.end())

    if not _END.match(s, pos):
        raise AnnotationParseError("unexpected trailing text", pos)
    return SceneAnnotation(condition, progression, organ, box_current, box_prior)


def parse_scene_annotations(text):
    """Split generated text into sentences; return (annotations, errors) lists."""
    annotations, errors = [], []
    for sentence in split_sentences(text):
        try:
            annotations.append(parse_scene_annotation(sentence))
        except AnnotationParseError as e:
            errors.append(e)
    return annotations, errors
