"""Shared fixtures: synthetic corpora, planted-vector embedders, echo providers."""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

import pytest

from claimtrace.corpus import ClaimTrace, Document, Paragraph, split_sentences
from claimtrace.embedding import EmbeddingService, MockEmbeddingProvider
from claimtrace.providers import ModelRequest, ModelResponse


def planted_vector(similarity: float, dim: int = 4) -> list[float]:
    """Vector whose cosine against the first basis vector is ``similarity``."""
    if not -1.0 <= similarity <= 1.0:
        raise ValueError(similarity)
    vec = [0.0] * dim
    vec[0] = similarity
    vec[1] = math.sqrt(max(0.0, 1.0 - similarity * similarity))
    return vec


def basis_vector(axis: int, dim: int = 4) -> list[float]:
    vec = [0.0] * dim
    vec[axis] = 1.0
    return vec


def make_document(
    doc_id: str = "doc-1",
    paragraph_texts: list[str] | None = None,
    finding: str = "Factor one increases outcome one.",
    gold_hypothesis: str = "We expect that factor one increases outcome one.",
    gold_evidence: str | None = None,
    gold_hyp_para: int | None = None,
    gold_ev_para: int | None = None,
) -> Document:
    if paragraph_texts is None:
        paragraph_texts = [
            "Background statement about the broader field. Prior work reviewed related topics.",
            "We expect that factor one increases outcome one. The design follows standard practice.",
            "The effect of factor one on outcome one was significant, F(1, 68) = 14.95, p = .001, "
            "N = 200, 95% CI [0.10, 0.30]. Scores were higher for group one than group two.",
        ]
        gold_hyp_para = 1 if gold_hyp_para is None else gold_hyp_para
        gold_ev_para = 2 if gold_ev_para is None else gold_ev_para
        if gold_evidence is None:
            gold_evidence = (
                "The effect of factor one on outcome one was significant, F(1, 68) = 14.95, "
                "p = .001, N = 200, 95% CI [0.10, 0.30]."
            )
    assert gold_evidence is not None
    paragraphs = tuple(
        Paragraph(index=i, text=text, sentences=tuple(split_sentences(text)))
        for i, text in enumerate(paragraph_texts)
    )
    return Document(
        id=doc_id,
        paragraphs=paragraphs,
        trace=ClaimTrace(
            finding=finding,
            gold_hypothesis=gold_hypothesis,
            gold_evidence=gold_evidence,
            gold_hyp_para=gold_hyp_para,
            gold_ev_para=gold_ev_para,
        ),
    )


def synthetic_corpus_records(n_docs: int, n_paragraphs: int = 12) -> list[dict]:
    """Well-formed corpus records with locatable gold spans and parseable evidence."""
    records = []
    for d in range(n_docs):
        hypothesis = f"We expect that factor {d} increases outcome {d} under condition {d}."
        evidence = (
            f"The effect of factor {d} on outcome {d} was significant and scores were higher "
            f"in group {d}, F(1, {60 + d}) = {10 + d}.{d}5, p = .001, N = {100 + d}, "
            f"95% CI [0.1{d}, 0.3{d}]."
        )
        hyp_idx = d % max(1, n_paragraphs - 2) + 1
        ev_idx = n_paragraphs - 1 if hyp_idx < n_paragraphs - 1 else 0
        paragraphs = []
        for p in range(n_paragraphs):
            if p == hyp_idx:
                paragraphs.append(
                    f"{hypothesis} The study design for unit {d} follows a standard protocol."
                )
            elif p == ev_idx:
                paragraphs.append(f"{evidence} Additional checks for unit {d} were consistent.")
            else:
                paragraphs.append(
                    f"Discussion block {p} for unit {d} covers adjacent theory. "
                    f"It reviews material {p} without stating predictions."
                )
        records.append(
            {
                "v": 1,
                "id": f"doc-{d:03d}",
                "finding": f"Factor {d} increases outcome {d} in study {d}.",
                "gold_hypothesis": hypothesis,
                "gold_evidence": evidence,
                "paragraphs": paragraphs,
            }
        )
    return records


def write_corpus(path: Path, records: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


@pytest.fixture
def mock_service() -> EmbeddingService:
    return EmbeddingService(providers={"mock": MockEmbeddingProvider(dim=32)})


def planted_service(overrides: dict[str, list[float]], dim: int = 4) -> EmbeddingService:
    return EmbeddingService(
        providers={"mock": MockEmbeddingProvider(dim=dim, overrides=overrides)}
    )


_FINDING_RE = re.compile(r"Finding:\n(.+?)\n\n", re.DOTALL)


class GoldEchoProvider:
    """Scriptable stand-in extractor: answers every prompt with the gold span
    for the document whose finding appears in the prompt."""

    def __init__(self, documents):
        self.by_finding = {doc.trace.finding: doc for doc in documents}
        self.calls = 0

    def complete(self, request: ModelRequest) -> ModelResponse:
        self.calls += 1
        user = request.messages[-1][1]
        match = _FINDING_RE.search(user)
        if match is None:
            raise AssertionError("prompt carries no finding block")
        doc = self.by_finding[match.group(1).strip()]
        if "statistical result statements" in request.messages[0][1]:
            return ModelResponse(text=f"EVIDENCE: {doc.trace.gold_evidence}")
        return ModelResponse(text=f"HYPOTHESIS: {doc.trace.gold_hypothesis}")


class StaticProvider:
    """Returns one fixed response text for every request."""

    def __init__(self, text: str):
        self.text = text
        self.calls = 0

    def complete(self, request: ModelRequest) -> ModelResponse:
        self.calls += 1
        return ModelResponse(text=self.text)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    entries = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            if getattr(report, "when", None) != "call":
                continue
            if "test_acceptance.py" in report.nodeid:
                entries.append((report.nodeid.split("::")[-1], status == "passed"))
    if entries:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, ok in entries:
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}")
