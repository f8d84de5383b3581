"""Corpus ingestion: documents as ordered prose paragraphs with one annotated claim trace.

A corpus file is newline-delimited JSON, one document per line:

    {"v": 1, "id": "...", "finding": "...", "gold_hypothesis": "...",
     "gold_evidence": "...", "paragraphs": ["...", ...],
     "gold_hyp_para": 3, "gold_ev_para": 7}

``gold_hyp_para`` / ``gold_ev_para`` are optional; missing indices are
resolved by normalized containment of the gold span in a paragraph.  A
document whose span cannot be located anywhere is still loaded, with the
index left unresolved (``None``) -- only oracle contexts and gold-based
diagnostics need it, and they skip such documents.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Terminal punctuation, optionally followed by a closing quote/bracket, then
# whitespace, then an uppercase letter or digit.
_BOUNDARY_RE = re.compile(r"[.?!]+[\"'”’)\]]*\s+(?=[\"'“‘(\[]*[A-Z0-9])")

# Tokens that end with a period but do not terminate a sentence.
_ABBREVIATIONS = (
    "e.g.",
    "i.e.",
    "et al.",
    "al.",
    "etc.",
    "cf.",
    "vs.",
    "fig.",
    "figs.",
    "eq.",
    "eqs.",
    "no.",
    "dr.",
    "mr.",
    "mrs.",
    "ms.",
    "prof.",
    "st.",
    "approx.",
    "resp.",
)


class CorpusError(Exception):
    """Raised for unreadable or schema-invalid corpus files."""


@dataclass(frozen=True)
class Paragraph:
    """One prose paragraph of a document body, with its sentence segmentation."""

    index: int
    text: str
    sentences: tuple[str, ...]


@dataclass(frozen=True)
class ClaimTrace:
    """The annotated triple for a document: finding, hypothesis, evidence.

    ``gold_hyp_para`` / ``gold_ev_para`` are the paragraph indices holding the
    annotated spans; ``None`` means the span could not be located.
    """

    finding: str
    gold_hypothesis: str
    gold_evidence: str
    gold_hyp_para: Optional[int] = None
    gold_ev_para: Optional[int] = None


@dataclass(frozen=True)
class Document:
    id: str
    paragraphs: tuple[Paragraph, ...]
    trace: ClaimTrace

    @property
    def n_paragraphs(self) -> int:
        return len(self.paragraphs)

    def paragraph_texts(self) -> list[str]:
        return [p.text for p in self.paragraphs]


def split_sentences(text: str) -> list[str]:
    """Deterministic rule-based sentence segmentation.

    Splits on terminal punctuation (., ?, !) followed by whitespace and an
    uppercase letter or digit, unless the preceding token is a known
    abbreviation.  Empty input yields an empty list.
    """
    if not text or not text.strip():
        return []
    boundaries: list[int] = []
    for match in _BOUNDARY_RE.finditer(text):
        head = text[: match.end()].rstrip()
        last_token = head.rsplit(None, 1)[-1].lower() if head else ""
        last_token = last_token.strip("(\"'[“‘").rstrip("\"')]”’")
        if last_token in _ABBREVIATIONS:
            continue
        boundaries.append(match.end())
    sentences: list[str] = []
    start = 0
    for cut in boundaries:
        piece = text[start:cut].strip()
        if piece:
            sentences.append(piece)
        start = cut
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def normalize_span(text: str) -> str:
    """Normalization used for gold-span matching.

    Lowercase, collapse whitespace runs to single spaces, and strip
    surrounding quote characters.  Annotated spans usually differ from body
    text only in whitespace or quoting.
    """
    collapsed = " ".join(text.split()).lower()
    return collapsed.strip("\"'“”‘’ ")


def locate_gold_paragraph(doc: Document, gold_span: str) -> Optional[int]:
    """Lowest paragraph index whose normalized text contains the normalized span."""
    needle = normalize_span(gold_span)
    if not needle:
        return None
    for para in doc.paragraphs:
        if needle in normalize_span(para.text):
            return para.index
    return None


def _build_document(record: dict, record_no: int) -> Document:
    for field in ("id", "finding", "gold_hypothesis", "gold_evidence", "paragraphs"):
        if field not in record:
            raise CorpusError(f"record {record_no}: missing field {field!r}")
    if record.get("v") != SCHEMA_VERSION:
        raise CorpusError(
            f"record {record_no}: schema version field 'v' must be {SCHEMA_VERSION}"
        )
    raw_paragraphs = record["paragraphs"]
    if not isinstance(raw_paragraphs, list) or not raw_paragraphs:
        raise CorpusError(f"record {record_no}: 'paragraphs' must be a non-empty list")
    paragraphs = []
    for i, text in enumerate(raw_paragraphs):
        if not isinstance(text, str) or not text.strip():
            raise CorpusError(f"record {record_no}: paragraph {i} is empty")
        paragraphs.append(Paragraph(index=i, text=text, sentences=tuple(split_sentences(text))))
    for field in ("finding", "gold_hypothesis", "gold_evidence"):
        if not str(record[field]).strip():
            raise CorpusError(f"record {record_no}: field {field!r} is empty")

    trace = ClaimTrace(
        finding=record["finding"],
        gold_hypothesis=record["gold_hypothesis"],
        gold_evidence=record["gold_evidence"],
        gold_hyp_para=record.get("gold_hyp_para"),
        gold_ev_para=record.get("gold_ev_para"),
    )
    doc = Document(id=str(record["id"]), paragraphs=tuple(paragraphs), trace=trace)

    n = len(paragraphs)
    for name, idx in (("gold_hyp_para", trace.gold_hyp_para), ("gold_ev_para", trace.gold_ev_para)):
        if idx is not None and not (isinstance(idx, int) and 0 <= idx < n):
            raise CorpusError(f"record {record_no}: {name}={idx!r} out of range for {n} paragraphs")

    resolved = {}
    if trace.gold_hyp_para is None:
        resolved["gold_hyp_para"] = locate_gold_paragraph(doc, trace.gold_hypothesis)
        if resolved["gold_hyp_para"] is None:
            logger.warning("document %s: gold hypothesis span not found in any paragraph", doc.id)
    if trace.gold_ev_para is None:
        resolved["gold_ev_para"] = locate_gold_paragraph(doc, trace.gold_evidence)
        if resolved["gold_ev_para"] is None:
            logger.warning("document %s: gold evidence span not found in any paragraph", doc.id)
    if resolved:
        doc = replace(doc, trace=replace(trace, **resolved))
    return doc


def load_corpus(path: str | Path) -> list[Document]:
    """Load all documents from a newline-delimited corpus file.

    Raises :class:`CorpusError` for a missing file, a malformed record
    (reported with its record number), or a duplicate document id.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    documents: list[Document] = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for record_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"record {record_no}: invalid JSON ({exc})") from exc
            doc = _build_document(record, record_no)
            if doc.id in seen_ids:
                raise CorpusError(f"record {record_no}: duplicate document id {doc.id!r}")
            seen_ids.add(doc.id)
            documents.append(doc)
    if not documents:
        logger.warning("corpus file %s contains no documents", path)
    return documents


def save_corpus(documents: Iterable[Document], path: str | Path) -> None:
    """Serialize documents back to the corpus file format (resolved indices included)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for doc in documents:
            record = {
                "v": SCHEMA_VERSION,
                "id": doc.id,
                "finding": doc.trace.finding,
                "gold_hypothesis": doc.trace.gold_hypothesis,
                "gold_evidence": doc.trace.gold_evidence,
                "paragraphs": [p.text for p in doc.paragraphs],
            }
            if doc.trace.gold_hyp_para is not None:
                record["gold_hyp_para"] = doc.trace.gold_hyp_para
            if doc.trace.gold_ev_para is not None:
                record["gold_ev_para"] = doc.trace.gold_ev_para
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
