"""Hypothesis scoring: calibrated semantic matching with micro-averaged P/R/F1.

Extracted hypotheses are paraphrases more often than copies, so scoring is
sentence-level: both spans are segmented, each predicted sentence counts as
matched when its cosine similarity to some gold sentence reaches the
threshold, and vice versa for gold sentences.  The threshold itself is
calibrated once on a rubric-labeled set by an exhaustive grid search and
then pinned (0.89 is the production cutoff).  All similarities live in the
dedicated evaluation embedding space, never the retrieval space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import split_sentences
from .embedding import EmbeddingService, EmbeddingSpec, cosine_similarity
from .extraction import Span

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.89
GRID_START = 10  # tau = j / 100 for j in [10, 100]
GRID_STOP = 100

CORRECT_RUBRIC_MIN = 2  # rubric scores 2-3 binarize to Correct


class CalibrationError(Exception):
    pass


@dataclass(frozen=True)
class CalibrationPair:
    predicted: str
    gold: str
    rubric_score: int

    def __post_init__(self) -> None:
        if self.rubric_score not in (0, 1, 2, 3):
            raise ValueError(f"rubric_score must be in 0..3, got {self.rubric_score}")

    @property
    def correct(self) -> bool:
        return self.rubric_score >= CORRECT_RUBRIC_MIN


@dataclass(frozen=True)
class MatchCounts:
    """Sentence-match tallies for one (predicted, gold) pair."""

    matched_pred: int
    total_pred: int
    matched_gold: int
    total_gold: int

    def __post_init__(self) -> None:
        if not (0 <= self.matched_pred <= self.total_pred):
            raise ValueError("matched_pred out of range")
        if not (0 <= self.matched_gold <= self.total_gold):
            raise ValueError("matched_gold out of range")


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def grid_taus() -> list[float]:
    return [j / 100.0 for j in range(GRID_START, GRID_STOP + 1)]


@dataclass(frozen=True)
class GridPoint:
    tau: float
    precision: float
    recall: float
    f1: float


def pair_similarities(
    pairs: Sequence[CalibrationPair],
    embeddings: EmbeddingService,
    spec: EmbeddingSpec,
) -> list[float]:
    sims = []
    for pair in pairs:
        pred_vec, gold_vec = embeddings.embed([pair.predicted, pair.gold], spec)
        sims.append(cosine_similarity(pred_vec, gold_vec))
    return sims


def calibration_grid(
    pairs: Sequence[CalibrationPair],
    embeddings: EmbeddingService,
    spec: EmbeddingSpec,
) -> list[GridPoint]:
    """Binary-classification P/R/F1 at every grid threshold.

    A pair is classified positive when its whole-span cosine similarity is at
    least tau; labels are the binarized rubric scores.
    """
    labels = [p.correct for p in pairs]
    if all(labels) or not any(labels):
        raise CalibrationError(
            "calibration set must contain both Correct and Incorrect pairs; "
            "got a single-class set"
        )
    sims = pair_similarities(pairs, embeddings, spec)
    points = []
    for tau in grid_taus():
        tp = sum(1 for s, y in zip(sims, labels) if s >= tau and y)
        fp = sum(1 for s, y in zip(sims, labels) if s >= tau and not y)
        fn = sum(1 for s, y in zip(sims, labels) if s < tau and y)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        points.append(GridPoint(tau=tau, precision=precision, recall=recall, f1=f1_score(precision, recall)))
    return points


def calibrate_threshold(
    pairs: Sequence[CalibrationPair],
    embeddings: EmbeddingService,
    spec: EmbeddingSpec,
) -> float:
    """Largest grid threshold maximizing binary F1 on the calibration set.

    The largest-tau tie rule keeps the cutoff strict when several thresholds
    are equally good.
    """
    points = calibration_grid(pairs, embeddings, spec)
    best_f1 = max(p.f1 for p in points)
    return max(p.tau for p in points if p.f1 == best_f1)


def score_hypothesis(
    predicted: Span,
    gold: str,
    tau: float,
    embeddings: EmbeddingService,
    spec: EmbeddingSpec,
) -> MatchCounts:
    """Sentence-level match counts for one prediction against its gold span.

    A predicted sentence matches when its best cosine against any gold
    sentence is at least tau; a gold sentence matches when any predicted
    sentence reaches tau against it.  One sentence may match several on the
    other side.  A NOT_FOUND prediction contributes no predicted sentences.
    """
    if not 0 < tau <= 1:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if not gold or not gold.strip():
        raise ValueError("gold span must be non-empty")
    gold_sentences = split_sentences(gold)
    if not isinstance(predicted, str) or not predicted.strip():
        return MatchCounts(0, 0, 0, len(gold_sentences))
    pred_sentences = split_sentences(predicted)

    gold_vecs = embeddings.embed(gold_sentences, spec)
    pred_vecs = embeddings.embed(pred_sentences, spec)

    matched_pred = 0
    gold_matched = [False] * len(gold_sentences)
    for pv in pred_vecs:
        hit = False
        for gi, gv in enumerate(gold_vecs):
            if cosine_similarity(pv, gv) >= tau:
                hit = True
                gold_matched[gi] = True
        if hit:
            matched_pred += 1
    return MatchCounts(
        matched_pred=matched_pred,
        total_pred=len(pred_sentences),
        matched_gold=sum(gold_matched),
        total_gold=len(gold_sentences),
    )


def micro_prf(counts: Iterable[MatchCounts]) -> PRF:
    """Pool counts across documents, then compute precision/recall/F1."""
    counts = list(counts)
    total_pred = sum(c.total_pred for c in counts)
    total_gold = sum(c.total_gold for c in counts)
    precision = sum(c.matched_pred for c in counts) / total_pred if total_pred else 0.0
    recall = sum(c.matched_gold for c in counts) / total_gold if total_gold else 0.0
    return PRF(precision=precision, recall=recall, f1=f1_score(precision, recall))
