"""Two-stage extraction: hypothesis from (finding, C1), then evidence from (finding, H, C2).

Stage 2 retrieves with the composite query (finding concatenated with the
stage-1 hypothesis) so evidence search benefits from what stage 1 found.  A
missing hypothesis degrades the query to the finding alone rather than
aborting the document.  All prompts instruct the model to copy sentences
verbatim and to emit a fixed absence marker when no span exists; the parser
maps that marker to the NOT_FOUND sentinel, which is distinct from an empty
string.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Optional, Union

from .corpus import Document
from .embedding import EmbeddingService
from .providers import ModelProvider, ModelRequest
from .retrieval import Context, ContextConfig, ContextKind, Reranker, Stage, build_context

logger = logging.getLogger(__name__)

ABSENCE_MARKER = "NO_SPAN_FOUND"
COMPOSITE_QUERY_SEPARATOR = " "


class _NotFoundType:
    """Singleton marking an absent extraction target (not the same as \"\")."""

    _instance: Optional["_NotFoundType"] = None

    def __new__(cls) -> "_NotFoundType":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NOT_FOUND"

    def __bool__(self) -> bool:
        return False


NOT_FOUND = _NotFoundType()
Span = Union[str, _NotFoundType]


class ExtractionMode(str, enum.Enum):
    ZERO_SHOT = "zero_shot"
    CHAIN_OF_THOUGHT = "chain_of_thought"


class PipelineMode(str, enum.Enum):
    PREDICTED_HYPOTHESIS = "predicted_hypothesis"
    GROUND_TRUTH_HYPOTHESIS = "ground_truth_hypothesis"


@dataclass(frozen=True)
class ExtractorSpec:
    model_id: str
    mode: ExtractionMode = ExtractionMode.ZERO_SHOT
    temperature: float = 0.0
    max_output: int = 1024


HYPOTHESIS_SYSTEM_PROMPT = """\
You extract hypothesis statements from scientific article text.

Given a finding from an article's abstract and a set of numbered paragraphs
from the article body, copy out the sentence or sentences that state the
testable expectation or prediction corresponding to that finding.

Rules:
- Copy complete sentences verbatim from the paragraphs. Never invent,
  rewrite, or merge fragments. Whitespace normalization is the only edit
  allowed.
- Several sentences may be returned, and they need not be adjacent.
- Prefer sentences with explicit prediction language or numbered labels
  over background or result statements.
- Do not include results, statistics, methods, or framing text.

Answer with a single line:
HYPOTHESIS: <copied sentence(s)>

If no such statement exists in the paragraphs, answer with exactly:
NO_SPAN_FOUND
"""

EVIDENCE_SYSTEM_PROMPT = """\
You extract statistical result statements from scientific article text.

Given a finding from an article's abstract, a hypothesis statement, and a
set of numbered paragraphs from the article body, copy out the sentence or
sentences reporting the statistical results that bear on that hypothesis
(test statistics, coefficients, p-values, confidence intervals, sample
sizes, or explicitly described effects).

Rules:
- Copy complete sentences verbatim from the paragraphs. Never invent,
  rewrite, or merge fragments. Whitespace normalization is the only edit
  allowed.
- Keep every number exactly as written; never round or correct values.
- Several sentences may be returned, and they need not be adjacent.
- Do not include hypotheses, methods, background, or interpretation-only
  text.

Answer with a single line:
EVIDENCE: <copied sentence(s)>

If no such statement exists in the paragraphs, answer with exactly:
NO_SPAN_FOUND
"""

_COT_ADDENDUM = (
    "\nBefore the final line, briefly reason through the candidate sentences"
    " and why they do or do not qualify. The final line must still follow the"
    " answer format above."
)

_STRICT_ADDENDUM = (
    "\nYour previous reply did not follow the answer format. Respond with"
    " exactly one line that starts with the answer label, or exactly"
    " NO_SPAN_FOUND. No other text."
)


def prompt_version_hash() -> str:
    """Content hash of the prompt templates, recorded into provenance."""
    material = HYPOTHESIS_SYSTEM_PROMPT + EVIDENCE_SYSTEM_PROMPT + _COT_ADDENDUM
    return hashlib.sha256(material.encode("utf-8")).hexdigest()[:16]


def _numbered_context(context: Context) -> str:
    return "\n\n".join(f"[{i + 1}] {text}" for i, text in enumerate(context.texts))


def build_hypothesis_request(
    finding: str,
    context: Context,
    extractor: ExtractorSpec,
    strict: bool = False,
) -> ModelRequest:
    system = HYPOTHESIS_SYSTEM_PROMPT
    if extractor.mode == ExtractionMode.CHAIN_OF_THOUGHT:
        system += _COT_ADDENDUM
    if strict:
        system += _STRICT_ADDENDUM
    user = (
        f"Finding:\n{finding}\n\n"
        f"Paragraphs:\n{_numbered_context(context)}\n\n"
        "Extract the hypothesis statement(s) matching the finding."
    )
    return ModelRequest(
        model_id=extractor.model_id,
        messages=(("system", system), ("user", user)),
        temperature=extractor.temperature,
        max_output=extractor.max_output,
    )


def build_evidence_request(
    finding: str,
    hypothesis: Optional[str],
    context: Context,
    extractor: ExtractorSpec,
    strict: bool = False,
) -> ModelRequest:
    system = EVIDENCE_SYSTEM_PROMPT
    if extractor.mode == ExtractionMode.CHAIN_OF_THOUGHT:
        system += _COT_ADDENDUM
    if strict:
        system += _STRICT_ADDENDUM
    hypothesis_block = (
        f"Hypothesis:\n{hypothesis}\n\n" if hypothesis else "Hypothesis:\n(not available)\n\n"
    )
    user = (
        f"Finding:\n{finding}\n\n"
        f"{hypothesis_block}"
        f"Paragraphs:\n{_numbered_context(context)}\n\n"
        "Extract the statistical result statement(s) supporting the hypothesis."
    )
    return ModelRequest(
        model_id=extractor.model_id,
        messages=(("system", system), ("user", user)),
        temperature=extractor.temperature,
        max_output=extractor.max_output,
    )


def parse_labeled_span(text: str, label: str) -> Optional[Span]:
    """Parse the model reply; ``None`` means unparseable (caller retries).

    Takes the payload after the last occurrence of ``label:`` so
    chain-of-thought preambles are skipped.  The absence marker anywhere in
    a labeled payload, or standing alone, maps to NOT_FOUND.
    """
    matches = list(re.finditer(rf"{re.escape(label)}\s*:", text))
    if matches:
        payload = text[matches[-1].end() :].strip()
        if not payload:
            return None
        if payload.startswith(ABSENCE_MARKER):
            return NOT_FOUND
        return " ".join(payload.split())
    if ABSENCE_MARKER in text:
        return NOT_FOUND
    return None


@dataclass
class ExtractionOutcome:
    span: Span
    flags: list[str] = field(default_factory=list)
    request_hashes: list[str] = field(default_factory=list)


def _run_extraction(
    build,  # (strict: bool) -> ModelRequest
    label: str,
    provider: ModelProvider,
) -> ExtractionOutcome:
    outcome = ExtractionOutcome(span=NOT_FOUND)
    request = build(False)
    outcome.request_hashes.append(request.content_hash())
    parsed = parse_labeled_span(provider.complete(request).text, label)
    if parsed is None:
        retry = build(True)
        outcome.request_hashes.append(retry.content_hash())
        parsed = parse_labeled_span(provider.complete(retry).text, label)
        if parsed is None:
            outcome.flags.append("unparseable_after_retry")
            parsed = NOT_FOUND
        else:
            outcome.flags.append("parse_retry_used")
    outcome.span = parsed
    return outcome


def extract_hypothesis(
    finding: str,
    context: Context,
    extractor: ExtractorSpec,
    provider: ModelProvider,
) -> Span:
    """Extract the hypothesis span from the stage-1 context (NOT_FOUND if absent)."""
    if not context.texts:
        raise ValueError("stage-1 context is empty")
    return _run_extraction(
        lambda strict: build_hypothesis_request(finding, context, extractor, strict),
        "HYPOTHESIS",
        provider,
    ).span


def extract_evidence(
    finding: str,
    hypothesis: Optional[str],
    context: Context,
    extractor: ExtractorSpec,
    provider: ModelProvider,
) -> Span:
    """Extract the statistical evidence span from the stage-2 context."""
    if not context.texts:
        raise ValueError("stage-2 context is empty")
    return _run_extraction(
        lambda strict: build_evidence_request(finding, hypothesis, context, extractor, strict),
        "EVIDENCE",
        provider,
    ).span


def compose_query(finding: str, hypothesis: Span) -> str:
    """Stage-2 retrieval query: finding plus hypothesis, or finding alone."""
    if isinstance(hypothesis, str) and hypothesis:
        return finding + COMPOSITE_QUERY_SEPARATOR + hypothesis
    return finding


@dataclass
class TraceResult:
    """Everything one pipeline run produced for one document."""

    doc_id: str
    hypothesis_text: Span
    evidence_text: Span
    context1: Context
    context2: Context
    composite_query: str
    provenance: dict = field(default_factory=dict)


@dataclass
class PipelineProviders:
    """Dependency bundle for one pipeline run."""

    extractor_provider: ModelProvider
    embeddings: Optional[EmbeddingService] = None
    reranker: Optional[Reranker] = None


def run_pipeline(
    doc: Document,
    config1: ContextConfig,
    config2: ContextConfig,
    extractor: ExtractorSpec,
    providers: PipelineProviders,
    mode: PipelineMode = PipelineMode.PREDICTED_HYPOTHESIS,
) -> TraceResult:
    """Run both stages sequentially for one document.

    Stage 2 never starts before stage 1 finishes: its retrieval query is the
    composite query built from the stage-1 output.  In ground-truth mode the
    annotated hypothesis replaces the extracted one everywhere (stage-1
    extraction is skipped); in predicted mode an oracle stage-2 context still
    puts the annotated hypothesis into the prompt, avoiding error
    propagation when the point is to bound extraction alone.
    """
    started = time.time()
    finding = doc.trace.finding
    flags: list[str] = []

    context1 = build_context(
        doc, finding, Stage.HYPOTHESIS, config1, providers.embeddings, providers.reranker
    )
    flags.extend(f"stage1:{f}" for f in context1.flags)

    if mode == PipelineMode.GROUND_TRUTH_HYPOTHESIS:
        hypothesis: Span = doc.trace.gold_hypothesis
        # informational, deliberately not a stage-prefixed degradation flag
        flags.append("mode:ground_truth_hypothesis_substituted")
    else:
        outcome1 = _run_extraction(
            lambda strict: build_hypothesis_request(finding, context1, extractor, strict),
            "HYPOTHESIS",
            providers.extractor_provider,
        )
        hypothesis = outcome1.span
        flags.extend(f"stage1:{f}" for f in outcome1.flags)

    composite_query = compose_query(finding, hypothesis)
    if not isinstance(hypothesis, str):
        flags.append("stage2:query_degraded_to_finding")

    context2 = build_context(
        doc, composite_query, Stage.EVIDENCE, config2, providers.embeddings, providers.reranker
    )
    flags.extend(f"stage2:{f}" for f in context2.flags)

    if config2.kind == ContextKind.ORACLE or mode == PipelineMode.GROUND_TRUTH_HYPOTHESIS:
        prompt_hypothesis: Optional[str] = doc.trace.gold_hypothesis
    else:
        prompt_hypothesis = hypothesis if isinstance(hypothesis, str) else None

    outcome2 = _run_extraction(
        lambda strict: build_evidence_request(
            finding, prompt_hypothesis, context2, extractor, strict
        ),
        "EVIDENCE",
        providers.extractor_provider,
    )
    flags.extend(f"stage2:{f}" for f in outcome2.flags)

    return TraceResult(
        doc_id=doc.id,
        hypothesis_text=hypothesis,
        evidence_text=outcome2.span,
        context1=context1,
        context2=context2,
        composite_query=composite_query,
        provenance={
            "model_id": extractor.model_id,
            "extraction_mode": extractor.mode.value,
            "pipeline_mode": mode.value,
            "prompt_version": prompt_version_hash(),
            "stage2_prompt_hypothesis": prompt_hypothesis,
            "flags": flags,
            "started_at": started,
            "finished_at": time.time(),
        },
    )
