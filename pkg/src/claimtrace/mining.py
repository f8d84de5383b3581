"""Hard-negative mining for within-document retriever training.

The hard negative for a training example is the paragraph most similar to
the gold (positive) paragraph that is not itself a paraphrase of the target:
candidates containing any sentence at or above the paraphrase threshold
(0.89, the calibrated semantic-match cutoff) against the annotated
hypothesis are filtered out first.  Mining runs in the base embedding space,
before any fine-tuning.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from .corpus import Document
from .embedding import EmbeddingService, EmbeddingSpec, cosine_similarity
from .eval_hypothesis import DEFAULT_TAU
from .extraction import COMPOSITE_QUERY_SEPARATOR

logger = logging.getLogger(__name__)


class TripletTask(str, enum.Enum):
    HYPOTHESIS = "hypothesis"
    EVIDENCE = "evidence"


@dataclass(frozen=True)
class Triplet:
    """One contrastive training example: anchor query, gold paragraph, hard negative."""

    task: TripletTask
    anchor: str
    positive: str
    negative: str

    def __post_init__(self) -> None:
        if not self.anchor.strip():
            raise ValueError("anchor must be non-empty")
        if self.positive == self.negative:
            raise ValueError("positive and negative must differ")


def mine_hard_negative(
    doc: Document,
    positive_idx: int,
    gold_hypothesis: str,
    embeddings: EmbeddingService,
    spec: EmbeddingSpec,
    tau: float = DEFAULT_TAU,
) -> Optional[int]:
    """Index of the hardest usable negative paragraph, or None.

    Candidates are every paragraph except the positive; any candidate with a
    sentence at cosine >= tau to the gold hypothesis is discarded as an
    unannotated paraphrase.  Of the survivors the one most similar to the
    positive paragraph wins (ties to the lower index).  Returns None for
    single-paragraph documents or when the filter removes everything.
    """
    if doc.n_paragraphs < 2:
        return None
    if not (0 <= positive_idx < doc.n_paragraphs):
        raise ValueError(f"positive_idx {positive_idx} out of range")

    gold_vec = embeddings.embed_one(gold_hypothesis, spec)
    positive_vec = embeddings.embed_one(doc.paragraphs[positive_idx].text, spec)

    best: Optional[int] = None
    best_score = float("-inf")
    for para in doc.paragraphs:
        if para.index == positive_idx:
            continue
        sentence_vecs = embeddings.embed(list(para.sentences), spec) if para.sentences else []
        if any(cosine_similarity(v, gold_vec) >= tau for v in sentence_vecs):
            continue
        score = cosine_similarity(embeddings.embed_one(para.text, spec), positive_vec)
        if score > best_score:
            best, best_score = para.index, score
    if best is None:
        logger.info("document %s: every candidate negative was filtered", doc.id)
    return best


def build_triplets(
    corpus: Sequence[Document],
    embeddings: EmbeddingService,
    spec: EmbeddingSpec,
    tau: float = DEFAULT_TAU,
) -> list[Triplet]:
    """Up to two triplets per document, one per task.

    The hypothesis-task anchor is the abstract finding; the evidence-task
    anchor concatenates the finding with the annotated hypothesis.  Tasks
    whose gold paragraph is unresolved or whose negative cannot be mined are
    skipped and logged.
    """
    triplets: list[Triplet] = []
    for doc in corpus:
        jobs = (
            (TripletTask.HYPOTHESIS, doc.trace.gold_hyp_para, doc.trace.finding),
            (
                TripletTask.EVIDENCE,
                doc.trace.gold_ev_para,
                doc.trace.finding + COMPOSITE_QUERY_SEPARATOR + doc.trace.gold_hypothesis,
            ),
        )
        for task, gold_idx, anchor in jobs:
            if gold_idx is None:
                logger.info("document %s: no gold paragraph for %s task", doc.id, task.value)
                continue
            negative_idx = mine_hard_negative(
                doc, gold_idx, doc.trace.gold_hypothesis, embeddings, spec, tau
            )
            if negative_idx is None:
                logger.info("document %s: no negative minable for %s task", doc.id, task.value)
                continue
            triplets.append(
                Triplet(
                    task=task,
                    anchor=anchor,
                    positive=doc.paragraphs[gold_idx].text,
                    negative=doc.paragraphs[negative_idx].text,
                )
            )
    return triplets
