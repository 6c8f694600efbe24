"""
Controlled Report Grammar
-------------------------
Sentence templates of the synthetic report language, the tokenizers used by
the report pipeline and the model vocabulary, and the word inventory the
vocabulary is built from.
"""

import re

from nltk.tokenize import RegexpTokenizer

from coca_cxr.report_processor.lexicon import CONDITIONS, DEFAULT_LEXICON, ORGANS, PROGRESSIONS

# A sentence ends at '.' followed by whitespace or end of text; "0.25" never splits
SENTENCE_TOKENIZER = RegexpTokenizer(r"\S.*?(?:\.(?=\s|$)|$)")
WORD_TOKENIZER = RegexpTokenizer(r"\d\.\d\d|[A-Za-z]+(?:-[A-Za-z]+)*|[\[\],.:]")

COORDINATE_TOKENS = tuple(f"{i / 100:.2f}" for i in range(101))

INDICATIONS = (
    "shortness of breath.",
    "fever and cough.",
    "chest pain.",
    "follow-up of known lung disease.",
    "evaluate for infection.",
)

NORMAL_SENTENCES = (
    "cardiac silhouette is within normal limits.",
    "osseous structures are unremarkable.",
    "there is no free air under the diaphragm.",
    "the visualized upper abdomen is unremarkable.",
)

CLEAR_LUNGS = "the lungs are clear."
NO_ACUTE_PROCESS = "no acute cardiopulmonary process."

# Comparison-only statements: no current status can be inferred, cleaning drops them
COMPARISON_ONLY_SENTENCES = (
    "mediastinal contours are unchanged.",
    "no interval change in the cardiac silhouette.",
    "heart size is stable compared to the prior study.",
    "support devices are again seen.",
    "lines and tubes are unchanged since the previous exam.",
)

TREND_WORDS = {
    "worsened": ("worsening", "worsened"),
    "improved": ("improving", "improved"),
    "unchanged": ("unchanged", "stable"),
}

ANNOTATION_WORDS = ("at", "coordinates", "for", "current", "image", "is", "previous")


def split_sentences(text):
    """Split on '.' followed by whitespace/end; whitespace inside a sentence is collapsed."""
    return [" ".join(s.split()) for s in SENTENCE_TOKENIZER.tokenize(text) if s.strip()]


def tokenize_words(text):
    return WORD_TOKENIZER.tokenize(text.lower())


def detokenize(tokens):
    """Inverse of tokenize_words for grammar text: no space before , . ] or after [."""
    text = " ".join(tokens)
    text = re.sub(r"\s+([,.\]:])", r"\1", text)
    text = re.sub(r"\[\s+", "[", text)
    text = re.sub(r",\s+(?=\d\.\d\d)", ",", text)
    return text


def present_finding(condition, organ):
    return f"{condition} is present at {organ}."


def present_impression(condition):
    return f"{condition} is present."


def comparison_finding(condition, organ, label, status="persisting"):
    """status: 'persisting' (lesion in both images), 'new' or 'resolved'."""
    if status == "new":
        return f"new {condition} at {organ}."
    if status == "resolved":
        return f"{condition} at {organ} has resolved."
    return f"{condition} is {label} at {organ}."


def comparison_impression(condition, label, status="persisting", variant=0):
    if status == "new":
        return f"new {condition}."
    if status == "resolved":
        return f"{condition} has resolved."
    trends = TREND_WORDS[label]
    return f"{trends[variant % len(trends)]} {condition}."


def vocabulary_words():
    """Every word-level token the grammar can emit, in a fixed order."""
    texts = list(INDICATIONS) + list(NORMAL_SENTENCES) + list(COMPARISON_ONLY_SENTENCES)
    texts += [CLEAR_LUNGS, NO_ACUTE_PROCESS, "has increased has decreased since the prior study."]
    texts += list(CONDITIONS) + list(ORGANS) + list(PROGRESSIONS) + list(ANNOTATION_WORDS)
    texts += [w for pair in TREND_WORDS.values() for w in pair]
    texts += sorted(DEFAULT_LEXICON.comparison_terms)
    texts += [comparison_finding("x", "y", "worsened", status) for status in ("new", "resolved")]
    texts += [present_finding("x", "y"), "[ ] , . :"]

    seen = {}
    for text in texts:
        for token in tokenize_words(text):
            if token not in ("x", "y"):
                seen.setdefault(token, None)
    return list(seen) + [t for t in COORDINATE_TOKENS if t not in seen]
