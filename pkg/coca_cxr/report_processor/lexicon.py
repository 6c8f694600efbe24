"""
Comparison Lexicon
------------------
Flip pairs, fixed points and comparison markers of the controlled report
language, plus the closed condition/organ/progression vocabularies.
"""

from dataclasses import dataclass, field

from coca_cxr.errors import ConfigurationError

CONDITIONS = ("pneumonia", "pleural effusion", "edema", "consolidation", "pneumothorax")

PROGRESSIONS = ("worsened", "unchanged", "improved")

ORGANS = (
    "left apical zone",
    "left costophrenic angle",
    "left hilar structures",
    "left lower lung zone",
    "left lung",
    "right apical zone",
    "right costophrenic angle",
    "right hilar structures",
    "right lower lung zone",
    "right lung",
)

DEFAULT_FLIP_PAIRS = (
    ("worsened", "improved"),
    ("worsening", "improving"),
    ("increased", "decreased"),
    ("increasing", "decreasing"),
    ("new", "resolved"),
)

DEFAULT_FIXED_POINTS = ("unchanged", "stable")

DEFAULT_MARKERS = (
    "prior", "previous", "compared", "again", "interval", "since", "persistent", "re-demonstrated",
)


def flip_progression(label):
    """worsened <-> improved; unchanged is a fixed point."""
    return {"worsened": "improved", "improved": "worsened", "unchanged": "unchanged"}[label]


@dataclass(frozen=True)
class ComparisonLexicon:
    flip_pairs: tuple = DEFAULT_FLIP_PAIRS
    fixed_points: tuple = DEFAULT_FIXED_POINTS
    markers: tuple = DEFAULT_MARKERS
    flip_map: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        flip = {term: term for term in self.fixed_points}
        for a, b in self.flip_pairs:
            if flip.get(a, b) != b or flip.get(b, a) != a:
                raise ConfigurationError(f"flip pair ({a}, {b}) conflicts with an existing entry")
            flip[a], flip[b] = b, a
        object.__setattr__(self, "flip_map", flip)

    @property
    def comparison_terms(self):
        """Every word whose presence makes a sentence comparative."""
        return frozenset(self.flip_map) | frozenset(self.markers)

    def flip(self, word):
        return self.flip_map.get(word, word)

    def is_involution(self):
        return all(self.flip(self.flip(w)) == w for w in self.flip_map)


DEFAULT_LEXICON = ComparisonLexicon()
