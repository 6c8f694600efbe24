"""
Report Processing Pipeline
--------------------------
Deterministic sectioning, comparison extraction, comparison reversal and
cleaning over the controlled report language. The interfaces mirror an
LLM-backed pipeline: one report in, cleaned report / comparison sentences out.
"""

import json
import logging
import re
from dataclasses import dataclass, field

from coca_cxr.report_processor.grammar import split_sentences, tokenize_words
from coca_cxr.report_processor.lexicon import CONDITIONS, DEFAULT_LEXICON, ORGANS

logger = logging.getLogger(__name__)

SECTION_HEADERS = ("INDICATION", "FINDINGS", "IMPRESSION")
_SECTION_RE = re.compile(r"\b(INDICATION|FINDINGS|IMPRESSION):")


@dataclass
class Report:
    indication: str = ""
    findings: list = field(default_factory=list)
    impression: list = field(default_factory=list)

    def text(self):
        """FINDINGS and IMPRESSION sentences as one string (the training text)."""
        return " ".join(self.findings + self.impression)

    def sentences(self):
        return split_sentences(self.indication) + self.findings + self.impression


@dataclass
class ReportPartition:
    kept: list = field(default_factory=list)        # no comparison term, copied verbatim
    rewritten: list = field(default_factory=list)   # (comparison sentence, present-status form)
    dropped: list = field(default_factory=list)     # comparison sentences with no inferable status
    rejects: list = field(default_factory=list)     # comparison sentences outside the grammar

    @property
    def comparisons(self):
        return [s for s, _ in self.rewritten] + self.dropped + self.rejects


def _alternation(options):
    ordered = sorted(options, key=len, reverse=True)
    return "|".join(r"\s+".join(map(re.escape, o.split())) for o in ordered)


_COND = _alternation(CONDITIONS)
_LOC = rf"(?P<loc>\s+at\s+(?:{_alternation(ORGANS)}))?"
_TRENDS = ("worsening", "worsened", "improving", "improved", "increasing", "decreasing",
           "unchanged", "stable", "persistent", "new")

# Rewrite rules: (pattern, keep) -- keep=False means the finding is gone from the current image
_CLEAN_RULES = (
    (re.compile(rf"^(?:(?:{'|'.join(_TRENDS)})\s+)+(?P<cond>{_COND}){_LOC}\.$"), True),
    (re.compile(rf"^(?P<cond>{_COND})\s+is\s+(?:worsened|improved|unchanged|stable){_LOC}\.$"), True),
    (re.compile(rf"^(?P<cond>{_COND}){_LOC}\s+has\s+(?:increased|decreased)"
                rf"(?:\s+since\s+the\s+(?:prior|previous)\s+(?:study|exam))?\.$"), True),
    (re.compile(rf"^(?P<cond>{_COND}){_LOC}\s+has\s+resolved\.$"), False),
)
_MENTIONS_CONDITION = re.compile(rf"\b(?:{_COND})\b")


def is_comparison(sentence, lexicon=DEFAULT_LEXICON):
    terms = lexicon.comparison_terms
    return any(token in terms for token in tokenize_words(sentence))


def _rewrite(sentence):
    """Return (rewritten or None, status) with status in kept/rewritten/dropped/reject."""
    lowered = " ".join(sentence.lower().split())
    for pattern, keep in _CLEAN_RULES:
        m = pattern.match(lowered)
        if m:
            if not keep:
                return None, "dropped"
            cond = " ".join(m.group("cond").split())
            loc = " ".join((m.group("loc") or "").split())
            return f"{cond} is present{' ' + loc if loc else ''}.", "rewritten"
    if not _MENTIONS_CONDITION.search(lowered):
        return None, "dropped"
    return None, "reject"


def _clean_sentences(sentences, lexicon, partition):
    out = []
    for sentence in sentences:
        if not sentence.endswith("."):
            partition.rejects.append(sentence)
            continue
        if not is_comparison(sentence, lexicon):
            partition.kept.append(sentence)
            out.append(sentence)
            continue
        rewritten, status = _rewrite(sentence)
        if status == "rewritten":
            partition.rewritten.append((sentence, rewritten))
            out.append(rewritten)
        elif status == "dropped":
            partition.dropped.append(sentence)
        else:
            partition.rejects.append(sentence)
    return out


def partition_report(report, lexicon=DEFAULT_LEXICON):
    """Clean `report` and return (cleaned report, ReportPartition of every input sentence)."""
    partition = ReportPartition()
    cleaned = Report(
        indication=" ".join(_clean_sentences(split_sentences(report.indication), lexicon, partition)),
        findings=_clean_sentences(report.findings, lexicon, partition),
        impression=_clean_sentences(report.impression, lexicon, partition),
    )
    return cleaned, partition


def clean_report(report, lexicon=DEFAULT_LEXICON, rejects=None):
    """
    Remove comparative content: comparison sentences are rewritten to a
    present-status form or dropped. Sentences outside the grammar are appended
    to `rejects` (when given) and left out of the output.
    """
    cleaned, partition = partition_report(report, lexicon)
    if partition.rejects:
        logger.debug("%d sentences rejected during cleaning", len(partition.rejects))
        if rejects is not None:
            rejects.extend(partition.rejects)
    return cleaned


def extract_comparisons(report, lexicon=DEFAULT_LEXICON):
    """Sentences containing at least one comparison term, in report order."""
    return [s for s in report.sentences() if is_comparison(s, lexicon)]


_NEW_FORM = re.compile(r"^(?P<new>new)\s+(?P<body>.+?)\.$", re.IGNORECASE)
_RESOLVED_FORM = re.compile(r"^(?P<body>.+?)\s+has\s+resolved\.$", re.IGNORECASE)


def _flip_words(text, lexicon):
    pattern = re.compile(r"(?<![\w-])(" + "|".join(map(re.escape, lexicon.flip_map)) + r")(?![\w-])",
                         re.IGNORECASE)

    def swap(m):
        word = m.group(1)
        partner = lexicon.flip(word.lower())
        return partner.capitalize() if word[0].isupper() else partner

    return pattern.sub(swap, text)


def reverse_comparison_text(sentence, lexicon=DEFAULT_LEXICON):
    """Describe the swapped image pair: flip every comparison term in one pass."""
    m = _NEW_FORM.match(sentence)
    if m:
        body = _flip_words(m.group("body"), lexicon)
        return f"{body[0].upper() + body[1:] if m.group('new')[0].isupper() else body} has resolved."
    m = _RESOLVED_FORM.match(sentence)
    if m:
        body = m.group("body")
        capital = body[0].isupper()
        body = _flip_words(body[0].lower() + body[1:] if capital else body, lexicon)
        return f"{'New' if capital else 'new'} {body}."
    return _flip_words(sentence, lexicon)


def parse_report_record(line):
    """
    Parse one record: optional "study_id<TAB>" prefix, then section headers
    INDICATION:, FINDINGS:, IMPRESSION: (any may be empty or absent).
    Returns (study_id or None, Report).
    """
    line = line.rstrip("\n")
    study_id = None
    if "\t" in line:
        study_id, line = line.split("\t", 1)
    parts = _SECTION_RE.split(line)
    sections = {header: "" for header in SECTION_HEADERS}
    for header, body in zip(parts[1::2], parts[2::2]):
        sections[header] = body.strip()
    report = Report(
        indication=" ".join(split_sentences(sections["INDICATION"])),
        findings=split_sentences(sections["FINDINGS"]),
        impression=split_sentences(sections["IMPRESSION"]),
    )
    return study_id, report


def format_report_record(study_id, report):
    body = (f"INDICATION: {report.indication} FINDINGS: {' '.join(report.findings)} "
            f"IMPRESSION: {' '.join(report.impression)}")
    return f"{study_id}\t{body}" if study_id is not None else body


def process_report_file(in_path, out_path, lexicon=DEFAULT_LEXICON):
    """
    Run cleaning and extraction over a report record file. Writes JSON lines
    {study_id, text, kind} with kind in clean/comparison/reject.
    Returns counts per kind.
    """
    counts = {"clean": 0, "comparison": 0, "reject": 0}
    with open(in_path) as src, open(out_path, "w") as dst:
        for line_no, line in enumerate(src, start=1):
            if not line.strip():
                continue
            study_id, report = parse_report_record(line)
            study_id = study_id or str(line_no)
            cleaned, partition = partition_report(report, lexicon)

            records = [{"study_id": study_id, "text": cleaned.text(), "kind": "clean"}]
            comparisons = extract_comparisons(report, lexicon)
            if comparisons:
                records.append({"study_id": study_id, "text": " ".join(comparisons), "kind": "comparison"})
            records += [{"study_id": study_id, "text": s, "kind": "reject"} for s in partition.rejects]

            for record in records:
                dst.write(json.dumps(record) + "\n")
                counts[record["kind"]] += 1

    logger.info("✓ Processed reports: %d clean, %d comparison, %d rejected sentences",
                counts["clean"], counts["comparison"], counts["reject"])
    return counts
