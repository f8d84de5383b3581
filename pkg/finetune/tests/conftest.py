"""Fixtures for retriever-training tests: synthetic corpora and planted geometries."""

from __future__ import annotations

import json
import math
from pathlib import Path

from claimtrace.corpus import load_corpus
from claimtrace.embedding import EmbeddingService, MockEmbeddingProvider


def write_corpus(path: Path, records: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


def synthetic_corpus_records(n_docs: int, n_paragraphs: int = 8) -> list[dict]:
    records = []
    for d in range(n_docs):
        hypothesis = f"We expect that factor {d} increases outcome {d} under condition {d}."
        evidence = (
            f"The effect of factor {d} on outcome {d} was significant, "
            f"F(1, {60 + d}) = {10 + d}.5, p = .001, N = {100 + d}."
        )
        hyp_idx = d % (n_paragraphs - 2) + 1
        ev_idx = n_paragraphs - 1
        paragraphs = []
        for p in range(n_paragraphs):
            if p == hyp_idx:
                paragraphs.append(f"{hypothesis} The protocol for unit {d} is standard.")
            elif p == ev_idx:
                paragraphs.append(f"{evidence} Checks for unit {d} agreed.")
            else:
                paragraphs.append(
                    f"Discussion block {p} for unit {d} reviews adjacent material "
                    f"without stating predictions."
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


def mock_service(dim: int = 32, overrides: dict | None = None) -> EmbeddingService:
    return EmbeddingService(
        providers={"mock": MockEmbeddingProvider(dim=dim, overrides=overrides)}
    )


def axis_vector(axis: int, dim: int = 4) -> list[float]:
    vec = [0.0] * dim
    vec[axis] = 1.0
    return vec


def tilted_vector(axis: int, cosine: float, dim: int = 4) -> list[float]:
    """Unit vector at the given cosine to basis ``axis`` (residual on the last axis)."""
    vec = [0.0] * dim
    vec[axis] = cosine
    vec[dim - 1] = math.sqrt(max(0.0, 1.0 - cosine * cosine))
    return vec


def trap_fixture(tmp_path: Path, n_docs: int = 10):
    """Corpus where each document plants a paraphrase trap next to the positive.

    Paragraph layout per document: 0 positive (holds the gold hypothesis),
    1 trap (one sentence at cosine 0.95 to the gold hypothesis; its full text
    is the top match for the positive paragraph), 2 survivor (the hardest
    legitimate negative, full text at 0.80), 3-4 neutral fillers.  Every
    embedded string is overridden, so the geometry is exact.
    """
    overrides: dict[str, list[float]] = {}
    records = []
    trap_index, survivor_index = 1, 2
    for d in range(n_docs):
        gold = f"We anticipate effect {d} raises measure {d} beyond chance."
        pad = f"Sampling notes {d} follow the registered plan."
        trap_sentence = f"Effect {d} is expected to lift measure {d} above chance levels."
        trap_other = f"These notes {d} describe unrelated instrumentation."
        survivor_a = f"The apparatus {d} is described in technical detail."
        survivor_b = f"Calibration {d} used the vendor defaults."
        filler_a = f"Historical context {d} appears in this paragraph."
        filler_b = f"Funding statement {d} closes the section."
        evidence = f"The contrast {d} was reliable, F(1, 44) = 9.{d}, N = 80."

        positive_text = f"{gold} {pad}"
        trap_text = f"{trap_sentence} {trap_other}"
        survivor_text = f"{survivor_a} {survivor_b}"
        filler_a_text = f"{filler_a} {evidence}"
        filler_b_text = filler_b

        overrides[gold] = axis_vector(0)
        overrides[pad] = axis_vector(1)
        overrides[positive_text] = axis_vector(2)
        overrides[trap_sentence] = tilted_vector(0, 0.95)
        overrides[trap_other] = axis_vector(1)
        overrides[trap_text] = tilted_vector(2, 0.99)
        overrides[survivor_a] = axis_vector(1)
        overrides[survivor_b] = axis_vector(1)
        overrides[survivor_text] = tilted_vector(2, 0.80)
        overrides[filler_a] = axis_vector(1)
        overrides[evidence] = axis_vector(1)
        overrides[filler_a_text] = axis_vector(1)
        overrides[filler_b_text] = axis_vector(1)

        records.append(
            {
                "v": 1,
                "id": f"trap-{d:02d}",
                "finding": f"Effect {d} raises measure {d}.",
                "gold_hypothesis": gold,
                "gold_evidence": evidence,
                "paragraphs": [positive_text, trap_text, survivor_text, filler_a_text, filler_b_text],
            }
        )
        overrides[f"Effect {d} raises measure {d}."] = axis_vector(0)

    path = write_corpus(tmp_path / "traps.jsonl", records)
    corpus = load_corpus(path)
    service = mock_service(dim=4, overrides=overrides)
    return corpus, service, trap_index, survivor_index
