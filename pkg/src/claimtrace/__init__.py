"""Claim-trace extraction: retrieve-and-extract pipeline, evaluation, diagnostics."""

from .corpus import (
    ClaimTrace,
    CorpusError,
    Document,
    Paragraph,
    load_corpus,
    locate_gold_paragraph,
    save_corpus,
    split_sentences,
)
from .diagnostics import (
    RSP_BINS,
    BucketSummary,
    RspBin,
    TransitionBucket,
    TransitionRow,
    bin_rsp,
    bucket_delta_f1,
    rsp,
    transition_bucket,
)
from .embedding import (
    CachePoisonedError,
    EmbeddingCache,
    EmbeddingError,
    EmbeddingService,
    EmbeddingSpec,
    Head,
    HttpEmbeddingProvider,
    MockEmbeddingProvider,
    ProviderUnavailableError,
    cosine_similarity,
    top_k,
)
from .eval_evidence import (
    BinaryMatch,
    ComponentParse,
    Counts,
    RuleBasedEvaluator,
    SetOverlap,
    counts_prf,
    parse_components,
    score_binary_component,
    score_evidence_pair,
    score_set_component,
)
from .eval_hypothesis import (
    DEFAULT_TAU,
    CalibrationError,
    CalibrationPair,
    GridPoint,
    MatchCounts,
    PRF,
    calibrate_threshold,
    calibration_grid,
    micro_prf,
    score_hypothesis,
)
from .extraction import (
    ABSENCE_MARKER,
    NOT_FOUND,
    ExtractionMode,
    ExtractorSpec,
    PipelineMode,
    PipelineProviders,
    TraceResult,
    compose_query,
    extract_evidence,
    extract_hypothesis,
    run_pipeline,
)
from .mining import Triplet, TripletTask, build_triplets, mine_hard_negative
from .providers import (
    CachingModelProvider,
    HttpModelProvider,
    ModelProvider,
    ModelRequest,
    ModelResponse,
    ProviderError,
    RateLimiter,
    ScriptedModelProvider,
)
from .retrieval import (
    Context,
    ContextConfig,
    ContextKind,
    IdentityReranker,
    ListwiseLlmReranker,
    OracleUnavailableError,
    Reranker,
    Stage,
    build_context,
    named_config,
    rerank,
)
from .runner import (
    ConfigError,
    ConfigurationPair,
    ExperimentConfig,
    GridRuntime,
    ResultRow,
    aggregate_rows,
    emit_report,
    load_experiment_config,
    rsp_diagnostic,
    run_grid,
    transition_diagnostic,
)

__version__ = "0.1.0"
