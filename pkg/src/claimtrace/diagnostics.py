"""Context diagnostics: relevant-sentence proportion and gold-paragraph transitions.

RSP measures how much of a hypothesis-stage context is actually about the
gold hypothesis: the fraction of context sentences whose cosine similarity
to the gold hypothesis meets the calibrated cutoff, in the evaluation
embedding space.  Papers are binned by RSP for reporting.

The transition analysis classifies, for a configuration change src -> tgt,
whether the gold paragraph is kept, gained, lost, or missing across the two
contexts, and aggregates the per-paper F1 change within each bucket.
"""

from __future__ import annotations

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import split_sentences
from .embedding import EmbeddingService, EmbeddingSpec, cosine_similarity
from .retrieval import Context

logger = logging.getLogger(__name__)


class TransitionBucket(str, enum.Enum):
    GT_KEPT = "GT_Kept"
    GT_GAINED = "GT_Gained"
    GT_LOST = "GT_Lost"
    GT_MISSING = "GT_Missing"


@dataclass(frozen=True)
class RspBin:
    """One RSP bin; left-closed right-open except the final bin, which is
    closed on both sides (an RSP of exactly 0.05 lands in ">5%")."""

    label: str
    lower: float
    upper: float


RSP_BINS = (
    RspBin("0–1%", 0.00, 0.01),
    RspBin("1–2%", 0.01, 0.02),
    RspBin("2–3%", 0.02, 0.03),
    RspBin("3–4%", 0.03, 0.04),
    RspBin("4–5%", 0.04, 0.05),
    RspBin(">5%", 0.05, 1.00),
)


def rsp(
    context: Context,
    gold_hypothesis: str,
    tau: float,
    embeddings: EmbeddingService,
    spec: EmbeddingSpec,
) -> float:
    """Fraction of context sentences at or above tau against the gold hypothesis.

    Computed over whatever the context contains, so full-text contexts are
    diluted by construction.  Hypothesis-stage diagnostic only: evidence
    spans tend to be unique strings, where sentence-level similarity carries
    little signal.
    """
    if not context.texts:
        raise ValueError("context is empty")
    sentences: list[str] = []
    for text in context.texts:
        sentences.extend(split_sentences(text))
    if not sentences:
        return 0.0
    gold_vec = embeddings.embed_one(gold_hypothesis, spec)
    sentence_vecs = embeddings.embed(sentences, spec)
    relevant = sum(1 for v in sentence_vecs if cosine_similarity(v, gold_vec) >= tau)
    return relevant / len(sentences)


def bin_rsp(fraction: float) -> RspBin:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"RSP must be within [0, 1], got {fraction}")
    for b in RSP_BINS[:-1]:
        if b.lower <= fraction < b.upper:
            return b
    return RSP_BINS[-1]


def transition_bucket(
    src: Context | Sequence[int],
    tgt: Context | Sequence[int],
    gold_idx: int,
) -> TransitionBucket:
    """Classify one paper by gold-paragraph membership across two contexts.

    Accepts full contexts or bare index sequences (stored artifacts keep
    indices only).
    """
    if gold_idx is None:  # type: ignore[comparison-overlap]
        raise ValueError("gold paragraph index is unresolved")
    in_src = gold_idx in src
    in_tgt = gold_idx in tgt
    if in_src and in_tgt:
        return TransitionBucket.GT_KEPT
    if not in_src and in_tgt:
        return TransitionBucket.GT_GAINED
    if in_src and not in_tgt:
        return TransitionBucket.GT_LOST
    return TransitionBucket.GT_MISSING


@dataclass(frozen=True)
class TransitionRow:
    doc_id: str
    bucket: TransitionBucket
    f1_src: float
    f1_tgt: float


@dataclass(frozen=True)
class BucketSummary:
    bucket: TransitionBucket
    mean_delta_f1: float
    count: int
    fraction: float


def bucket_delta_f1(rows: Sequence[TransitionRow]) -> dict[TransitionBucket, BucketSummary]:
    """Per-bucket mean F1 change (tgt - src), count, and fraction of papers."""
    seen: set[str] = set()
    for row in rows:
        if row.doc_id in seen:
            raise ValueError(f"duplicate doc_id {row.doc_id!r} in transition rows")
        seen.add(row.doc_id)
    grouped: dict[TransitionBucket, list[float]] = defaultdict(list)
    for row in rows:
        grouped[row.bucket].append(row.f1_tgt - row.f1_src)
    total = len(rows)
    return {
        bucket: BucketSummary(
            bucket=bucket,
            mean_delta_f1=sum(deltas) / len(deltas),
            count=len(deltas),
            fraction=len(deltas) / total,
        )
        for bucket, deltas in grouped.items()
    }


def rsp_report_rows(
    entries: Iterable[tuple[str, str, float]],
) -> list[dict[str, object]]:
    """CSV-shaped rows (doc_id, config, rsp, bin) from (doc, config, rsp) triples."""
    return [
        {"doc_id": doc_id, "config": config, "rsp": round(value, 6), "bin": bin_rsp(value).label}
        for doc_id, config, value in entries
    ]
