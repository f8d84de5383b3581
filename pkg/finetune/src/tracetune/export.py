"""Export fine-tuned paragraph embeddings as sidecar records for the primary cache.

One record per (paragraph, head) under provider id "finetuned", written
through the primary's own cache writer so the format is bit-compatible by
construction.  :class:`FinetunedEmbeddingProvider` additionally implements
the primary's provider protocol for query-side encoding at inference time.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from claimtrace.corpus import Document
from claimtrace.embedding import EmbeddingCache, EmbeddingService, EmbeddingSpec, Head
from claimtrace.mining import TripletTask

from .training import TrainingResult, base_spec

logger = logging.getLogger(__name__)

FINETUNED_PROVIDER_ID = "finetuned"

HEAD_TASKS = {
    Head.RETRIEVAL_HYPOTHESIS: TripletTask.HYPOTHESIS,
    Head.RETRIEVAL_EVIDENCE: TripletTask.EVIDENCE,
}


class ExportError(Exception):
    pass


def _project(
    result: TrainingResult,
    texts: Sequence[str],
    head: Head,
    embeddings: EmbeddingService,
) -> list[np.ndarray]:
    task = HEAD_TASKS.get(head)
    if task is None:
        raise ExportError(f"no projection head for embedding head {head.value!r}")
    base_vectors = embeddings.embed(list(texts), base_spec(result.config.encoder_id))
    batch = torch.tensor(np.stack(base_vectors), dtype=torch.float32)
    with torch.no_grad():
        projected = result.model(batch, task).numpy().astype(np.float64)
    if projected.shape[1] != result.config.projection_dim:
        raise ExportError(
            f"projected dim {projected.shape[1]} != configured "
            f"{result.config.projection_dim}"
        )
    if not np.all(np.isfinite(projected)):
        raise ExportError("projected embeddings contain non-finite values")
    return [projected[i] for i in range(projected.shape[0])]


class FinetunedEmbeddingProvider:
    """claimtrace embedding provider backed by the trained model.

    Lets the primary encode free-form queries (findings, composite queries)
    in the fine-tuned spaces; paragraph vectors normally come from the
    exported sidecar instead.
    """

    def __init__(self, result: TrainingResult, base_embeddings: EmbeddingService):
        self.result = result
        self.base_embeddings = base_embeddings

    def embed_batch(self, texts: Sequence[str], spec: EmbeddingSpec) -> list[np.ndarray]:
        return _project(self.result, texts, spec.head, self.base_embeddings)


def export_embeddings(
    result: TrainingResult,
    corpus: Sequence[Document],
    base_embeddings: EmbeddingService,
    sidecar_dir: str | Path,
    include_queries: bool = False,
) -> int:
    """Write one cache record per (paragraph, head); returns the record count.

    With ``include_queries`` the static retrieval queries are exported too:
    each finding under the hypothesis head and each finding-plus-annotated-
    hypothesis composite under the evidence head.  That is every query the
    ground-truth-hypothesis regime needs, so such runs can read the sidecar
    with no provider at all.  Predicted-hypothesis runs build composite
    queries at runtime and still need :class:`FinetunedEmbeddingProvider`.
    """
    cache = EmbeddingCache(sidecar_dir)
    written = 0
    for head in HEAD_TASKS:
        spec = EmbeddingSpec(provider_id=FINETUNED_PROVIDER_ID, head=head)
        for doc in corpus:
            texts = list(doc.paragraph_texts())
            if include_queries:
                texts.append(
                    doc.trace.finding
                    if head == Head.RETRIEVAL_HYPOTHESIS
                    else doc.trace.finding + " " + doc.trace.gold_hypothesis
                )
            for text, vector in zip(texts, _project(result, texts, head, base_embeddings)):
                cache.put(spec, text, vector)
                written += 1
    logger.info("exported %d sidecar records to %s", written, sidecar_dir)
    return written
