"""Stage-specific context construction: full text, dense top-k, rerank-to-k, oracle.

A context is the ordered set of body paragraphs handed to the extractor for
one stage.  Dense configurations rank paragraphs by cosine against the stage
query in the retrieval space; reranked configurations pull a wider candidate
pool first and let a listwise reranker pick the final k.  Oracle contexts
contain exactly the annotated gold paragraph for the stage, bounding
extraction performance with retrieval errors removed.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, replace
from typing import Optional, Protocol, Sequence

from .corpus import Document
from .embedding import EmbeddingService, EmbeddingSpec, Head, top_k
from .providers import ModelProvider, ModelRequest

logger = logging.getLogger(__name__)

DEFAULT_RERANK_POOL = 30
CANONICAL_CONFIG_NAMES = (
    "full_text",
    "rag_k5",
    "rag_k10",
    "rag_k20",
    "rerank_k5",
    "finetuned_rerank_k5",
    "oracle",
)


class ContextKind(str, enum.Enum):
    FULL_TEXT = "full_text"
    TOP_K = "top_k"
    RERANK = "rerank"
    ORACLE = "oracle"


class Stage(str, enum.Enum):
    HYPOTHESIS = "hypothesis"
    EVIDENCE = "evidence"


STAGE_HEADS = {
    Stage.HYPOTHESIS: Head.RETRIEVAL_HYPOTHESIS,
    Stage.EVIDENCE: Head.RETRIEVAL_EVIDENCE,
}


class RetrievalError(Exception):
    pass


class OracleUnavailableError(RetrievalError):
    """Oracle context requested for a document whose gold paragraph is unresolved."""


@dataclass(frozen=True)
class ContextConfig:
    kind: ContextKind
    k: Optional[int] = None
    pool_m: Optional[int] = None
    retriever_spec: Optional[EmbeddingSpec] = None
    reranker_id: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind == ContextKind.TOP_K:
            if self.k is None or self.k < 1:
                raise ValueError("top_k configuration requires positive k")
            if self.retriever_spec is None:
                raise ValueError("top_k configuration requires a retriever spec")
        if self.kind == ContextKind.RERANK:
            if self.k is None or self.k < 1:
                raise ValueError("rerank configuration requires positive k")
            if self.pool_m is None or self.pool_m < self.k:
                raise ValueError("rerank configuration requires pool_m >= k")
            if self.retriever_spec is None:
                raise ValueError("rerank configuration requires a retriever spec")


@dataclass(frozen=True)
class Context:
    stage: Stage
    paragraph_indices: tuple[int, ...]
    texts: tuple[str, ...]
    config_used: ContextConfig
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.paragraph_indices) != len(set(self.paragraph_indices)):
            raise ValueError("context contains duplicate paragraph indices")
        if len(self.paragraph_indices) != len(self.texts):
            raise ValueError("indices and texts length mismatch")

    def __contains__(self, paragraph_index: int) -> bool:
        return paragraph_index in self.paragraph_indices

    def joined_text(self) -> str:
        return "\n\n".join(self.texts)


class Reranker(Protocol):
    def rank(self, query: str, texts: Sequence[str]) -> Sequence[int]:
        """Preference order over candidates, as indices into ``texts``."""
        ...


class IdentityReranker:
    def rank(self, query: str, texts: Sequence[str]) -> Sequence[int]:
        return list(range(len(texts)))


_RANK_TAG_RE = re.compile(r"\[(\d+)\]")

_RERANK_INSTRUCTIONS = (
    "You rank text passages by how useful each one is for answering a query. "
    "Passages are tagged [1] through [{n}]. Reply with the tags only, best "
    "passage first, like: [3] > [1] > [2]. Include every tag exactly once and "
    "write nothing else."
)


class ListwiseLlmReranker:
    """Single listwise pass over the candidate pool via a chat model.

    The pool (default 30 short paragraphs) fits one prompt, so no sliding
    windows.  The response parser takes the first valid ranked tag list; tags
    outside the candidate range are dropped and missing candidates keep their
    dense order at the tail.
    """

    def __init__(self, provider: ModelProvider, model_id: str, max_output: int = 512):
        self.provider = provider
        self.model_id = model_id
        self.max_output = max_output

    def rank(self, query: str, texts: Sequence[str]) -> Sequence[int]:
        numbered = "\n\n".join(f"[{i + 1}] {text}" for i, text in enumerate(texts))
        request = ModelRequest(
            model_id=self.model_id,
            messages=(
                ("system", _RERANK_INSTRUCTIONS.format(n=len(texts))),
                ("user", f"Query:\n{query}\n\nPassages:\n{numbered}"),
            ),
            temperature=0.0,
            max_output=self.max_output,
        )
        response = self.provider.complete(request)
        order: list[int] = []
        for tag in _RANK_TAG_RE.findall(response.text):
            idx = int(tag) - 1
            if 0 <= idx < len(texts) and idx not in order:
                order.append(idx)
        return order


def rerank(query: str, candidates: Context, k: int, reranker: Reranker) -> Context:
    """Reorder a candidate context and keep the top min(k, n) entries.

    The reranker's output is sanitized: out-of-range or duplicate positions
    are discarded and any missing candidates are appended in dense order,
    with a flag recording the degradation.  A reranker exception falls back
    to the dense order entirely.
    """
    if not candidates.texts:
        raise RetrievalError("cannot rerank an empty candidate context")
    if k < 1:
        raise ValueError("k must be positive")
    flags = list(candidates.flags)
    failed = False
    try:
        raw = list(reranker.rank(query, candidates.texts))
    except Exception as exc:  # noqa: BLE001 - degrade, never abort the run
        logger.warning("reranker failed (%s); falling back to dense order", exc)
        raw = []
        failed = True
        flags.append("reranker_error_dense_fallback")

    order: list[int] = []
    invalid = False
    for pos in raw:
        if isinstance(pos, int) and 0 <= pos < len(candidates.texts) and pos not in order:
            order.append(pos)
        else:
            invalid = True
    if not order and not failed:
        flags.append("reranker_empty_dense_fallback")
    elif raw and (invalid or len(order) < len(candidates.texts)):
        flags.append("reranker_partial_order_filled_dense")
    if len(order) < len(candidates.texts):
        order.extend(i for i in range(len(candidates.texts)) if i not in order)

    keep = order[: min(k, len(order))]
    return replace(
        candidates,
        paragraph_indices=tuple(candidates.paragraph_indices[i] for i in keep),
        texts=tuple(candidates.texts[i] for i in keep),
        flags=tuple(flags),
    )


def _dense_context(
    doc: Document,
    query: str,
    stage: Stage,
    config: ContextConfig,
    embeddings: EmbeddingService,
    k: int,
) -> Context:
    assert config.retriever_spec is not None
    spec = EmbeddingSpec(
        provider_id=config.retriever_spec.provider_id,
        head=STAGE_HEADS[stage],
        task_hint=config.retriever_spec.task_hint,
    )
    paragraph_vectors = embeddings.embed(doc.paragraph_texts(), spec)
    query_vector = embeddings.embed_one(query, spec)
    ranked = top_k(query_vector, paragraph_vectors, k)
    return Context(
        stage=stage,
        paragraph_indices=tuple(ranked),
        texts=tuple(doc.paragraphs[i].text for i in ranked),
        config_used=config,
    )


def build_context(
    doc: Document,
    query: str,
    stage: Stage,
    config: ContextConfig,
    embeddings: EmbeddingService | None = None,
    reranker: Reranker | None = None,
) -> Context:
    """Construct the context set for one stage under the given configuration.

    full_text: every paragraph in document order.  top_k: dense retrieval in
    the stage's retrieval head.  rerank: dense pool of pool_m, reranked and
    truncated to k.  oracle: exactly the gold paragraph for the stage.
    """
    if config.kind == ContextKind.FULL_TEXT:
        return Context(
            stage=stage,
            paragraph_indices=tuple(range(doc.n_paragraphs)),
            texts=tuple(doc.paragraph_texts()),
            config_used=config,
        )

    if config.kind == ContextKind.ORACLE:
        gold = doc.trace.gold_hyp_para if stage == Stage.HYPOTHESIS else doc.trace.gold_ev_para
        if gold is None:
            raise OracleUnavailableError(
                f"document {doc.id}: gold {stage.value} paragraph unresolved"
            )
        return Context(
            stage=stage,
            paragraph_indices=(gold,),
            texts=(doc.paragraphs[gold].text,),
            config_used=config,
        )

    if embeddings is None:
        raise RetrievalError(f"{config.kind.value} configuration requires an embedding service")

    if config.kind == ContextKind.TOP_K:
        assert config.k is not None
        return _dense_context(doc, query, stage, config, embeddings, config.k)

    if config.kind == ContextKind.RERANK:
        assert config.k is not None and config.pool_m is not None
        if reranker is None:
            raise RetrievalError("rerank configuration requires a reranker")
        pool = _dense_context(doc, query, stage, config, embeddings, config.pool_m)
        return rerank(query, pool, config.k, reranker)

    raise RetrievalError(f"unknown context kind: {config.kind}")


def named_config(
    name: str,
    retriever_provider: str = "mock",
    finetuned_provider: str = "finetuned",
    reranker_id: Optional[str] = None,
) -> ContextConfig:
    """Canonical configurations used in config files and result tables."""
    base_spec = EmbeddingSpec(provider_id=retriever_provider, head=Head.RETRIEVAL_HYPOTHESIS)
    tuned_spec = EmbeddingSpec(provider_id=finetuned_provider, head=Head.RETRIEVAL_HYPOTHESIS)
    table = {
        "full_text": ContextConfig(kind=ContextKind.FULL_TEXT),
        "rag_k5": ContextConfig(kind=ContextKind.TOP_K, k=5, retriever_spec=base_spec),
        "rag_k10": ContextConfig(kind=ContextKind.TOP_K, k=10, retriever_spec=base_spec),
        "rag_k20": ContextConfig(kind=ContextKind.TOP_K, k=20, retriever_spec=base_spec),
        "rerank_k5": ContextConfig(
            kind=ContextKind.RERANK,
            k=5,
            pool_m=DEFAULT_RERANK_POOL,
            retriever_spec=base_spec,
            reranker_id=reranker_id,
        ),
        "finetuned_rerank_k5": ContextConfig(
            kind=ContextKind.RERANK,
            k=5,
            pool_m=DEFAULT_RERANK_POOL,
            retriever_spec=tuned_spec,
            reranker_id=reranker_id,
        ),
        "oracle": ContextConfig(kind=ContextKind.ORACLE),
    }
    if name not in table:
        raise ValueError(f"unknown configuration name {name!r}; known: {sorted(table)}")
    return table[name]
