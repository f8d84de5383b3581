"""Configuration-driven experiment grid with per-document artifacts and reports.

One work item is (extractor, configuration, document): run the two-stage
pipeline, score both stages, and persist a JSON artifact.  Artifacts double
as completion markers, so an interrupted grid resumes where it stopped and a
finished grid reruns without touching any provider.  Aggregate rows are
always recomputed from the artifacts on disk, never trusted from memory, and
reports carry no timestamps so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .corpus import Document, load_corpus
from .diagnostics import TransitionRow, bin_rsp, bucket_delta_f1, rsp, transition_bucket
from .embedding import EmbeddingService, EmbeddingSpec, Head
from .eval_evidence import (
    BinaryMatch,
    ComponentParse,
    Counts,
    SetOverlap,
    counts_prf,
    parse_components,
    score_evidence_pair,
)
from .eval_hypothesis import DEFAULT_TAU, MatchCounts, micro_prf, score_hypothesis
from .extraction import (
    ExtractionMode,
    ExtractorSpec,
    PipelineMode,
    PipelineProviders,
    TraceResult,
    run_pipeline,
)
from .providers import ModelProvider, ProviderError
from .retrieval import (
    Context,
    ContextConfig,
    ContextKind,
    OracleUnavailableError,
    Reranker,
    Stage,
    named_config,
)

logger = logging.getLogger(__name__)

STAGES = ("hypothesis", "evidence")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ConfigurationPair:
    name: str
    stage1: ContextConfig
    stage2: ContextConfig


@dataclass
class ExperimentConfig:
    corpus_path: Path
    configurations: list[ConfigurationPair]
    extractors: list[ExtractorSpec]
    tau: float = DEFAULT_TAU
    evaluator_model: str = "evaluator"
    eval_embedding_provider: str = "mock"
    workers: int = 1
    cache_dir: Optional[Path] = None
    out_dir: Path = Path("runs")
    mode: PipelineMode = PipelineMode.PREDICTED_HYPOTHESIS

    def __post_init__(self) -> None:
        names = [c.name for c in self.configurations]
        if len(names) != len(set(names)):
            raise ConfigError(f"configuration names must be unique, got {names}")
        if not self.configurations:
            raise ConfigError("at least one configuration is required")
        if not self.extractors:
            raise ConfigError("at least one extractor is required")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def eval_spec(self) -> EmbeddingSpec:
        return EmbeddingSpec(
            provider_id=self.eval_embedding_provider,
            head=Head.EVALUATION,
            task_hint="SEMANTIC_SIMILARITY",
        )


def _context_config_from_dict(raw: dict, default_provider: str) -> ContextConfig:
    try:
        kind = ContextKind(raw["kind"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad context config {raw!r}: {exc}") from exc
    spec = None
    if kind in (ContextKind.TOP_K, ContextKind.RERANK):
        spec = EmbeddingSpec(
            provider_id=raw.get("provider", default_provider),
            head=Head.RETRIEVAL_HYPOTHESIS,
        )
    try:
        return ContextConfig(
            kind=kind,
            k=raw.get("k"),
            pool_m=raw.get("pool_m"),
            retriever_spec=spec,
            reranker_id=raw.get("reranker_id"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Parse the JSON experiment file; canonical configuration names expand
    to their standard definitions."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read experiment config {path}: {exc}") from exc

    default_provider = raw.get("retriever_provider", "mock")
    configurations: list[ConfigurationPair] = []
    for entry in raw.get("configurations", []):
        if isinstance(entry, str):
            try:
                cfg = named_config(entry, retriever_provider=default_provider)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            configurations.append(ConfigurationPair(name=entry, stage1=cfg, stage2=cfg))
        else:
            name = entry.get("name")
            if not name:
                raise ConfigError(f"configuration entry needs a name: {entry!r}")
            stage1 = _context_config_from_dict(entry["stage1"], default_provider)
            stage2 = _context_config_from_dict(entry["stage2"], default_provider)
            configurations.append(ConfigurationPair(name=name, stage1=stage1, stage2=stage2))

    extractors = []
    for entry in raw.get("extractors", []):
        try:
            extractors.append(
                ExtractorSpec(
                    model_id=entry["model_id"],
                    mode=ExtractionMode(entry.get("mode", "zero_shot")),
                    temperature=float(entry.get("temperature", 0.0)),
                    max_output=int(entry.get("max_output", 1024)),
                )
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad extractor entry {entry!r}: {exc}") from exc

    try:
        mode = PipelineMode(raw.get("mode", "predicted_hypothesis"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        corpus_path=Path(raw["corpus"]),
        configurations=configurations,
        extractors=extractors,
        tau=float(raw.get("tau", DEFAULT_TAU)),
        evaluator_model=raw.get("evaluator_model", "evaluator"),
        eval_embedding_provider=raw.get("eval_embedding_provider", default_provider),
        workers=int(raw.get("workers", 1)),
        cache_dir=Path(raw["cache_dir"]) if raw.get("cache_dir") else None,
        out_dir=Path(raw.get("out_dir", "runs")),
        mode=mode,
    )


@dataclass
class GridRuntime:
    """Live dependencies for a grid run; tests inject offline doubles here.

    Embeddings are always required: even a full-text grid scores hypotheses
    in the evaluation embedding space.
    """

    extractor_provider: ModelProvider
    evaluator_provider: ModelProvider
    embeddings: EmbeddingService
    reranker: Optional[Reranker] = None


@dataclass(frozen=True)
class ResultRow:
    extractor: str
    extraction_mode: str
    config: str
    stage: str
    precision: float
    recall: float
    f1: float
    n_docs: int
    degradations: int


def extractor_slug(spec: ExtractorSpec) -> str:
    raw = f"{spec.model_id}__{spec.mode.value}"
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", raw)


def artifact_path(out_dir: Path, spec: ExtractorSpec, config_name: str, doc_id: str) -> Path:
    safe_doc = re.sub(r"[^A-Za-z0-9_.-]+", "-", doc_id)
    return out_dir / "artifacts" / extractor_slug(spec) / config_name / f"{safe_doc}.json"


def _context_to_json(context: Context) -> dict:
    return {
        "stage": context.stage.value,
        "paragraph_indices": list(context.paragraph_indices),
        "kind": context.config_used.kind.value,
        "flags": list(context.flags),
    }


def _span_to_json(span) -> Optional[str]:
    return span if isinstance(span, str) else None


def _parse_to_json(parse: ComponentParse) -> dict:
    body: dict = {"failed": sorted(parse.failed)}
    for name in ("variables", "relationships", "confidence_intervals"):
        s: SetOverlap = getattr(parse, name)
        body[name] = {"size_a": s.size_a, "size_b": s.size_b, "intersection": s.intersection}
    for name in ("test_family", "sample_size_df"):
        b: BinaryMatch = getattr(parse, name)
        body[name] = {"gold_str": b.gold_str, "pred_str": b.pred_str, "match": b.match}
    return body


def parse_from_json(body: dict) -> ComponentParse:
    return ComponentParse(
        variables=SetOverlap(**body["variables"]),
        relationships=SetOverlap(**body["relationships"]),
        confidence_intervals=SetOverlap(**body["confidence_intervals"]),
        test_family=BinaryMatch(**body["test_family"]),
        sample_size_df=BinaryMatch(**body["sample_size_df"]),
        failed=frozenset(body.get("failed", ())),
    )


def _score_and_serialize(
    doc: Document,
    result: TraceResult,
    config: ExperimentConfig,
    runtime: GridRuntime,
    config_name: str,
) -> dict:
    assert runtime.embeddings is not None
    hyp_counts = score_hypothesis(
        result.hypothesis_text,
        doc.trace.gold_hypothesis,
        config.tau,
        runtime.embeddings,
        config.eval_spec,
    )
    parse = parse_components(
        doc.trace.gold_evidence,
        result.evidence_text,
        runtime.evaluator_provider,
        model_id=config.evaluator_model,
    )
    ev_counts = score_evidence_pair(parse)
    flags = list(result.provenance.get("flags", []))
    flags.extend(f"stage2:parse_failed:{name}" for name in sorted(parse.failed))
    return {
        "doc_id": doc.id,
        "config": config_name,
        "extractor": result.provenance.get("model_id"),
        "extraction_mode": result.provenance.get("extraction_mode"),
        "pipeline_mode": result.provenance.get("pipeline_mode"),
        "hypothesis_text": _span_to_json(result.hypothesis_text),
        "evidence_text": _span_to_json(result.evidence_text),
        "composite_query": result.composite_query,
        "context1": _context_to_json(result.context1),
        "context2": _context_to_json(result.context2),
        "hypothesis_counts": {
            "matched_pred": hyp_counts.matched_pred,
            "total_pred": hyp_counts.total_pred,
            "matched_gold": hyp_counts.matched_gold,
            "total_gold": hyp_counts.total_gold,
        },
        "component_parse": _parse_to_json(parse),
        "evidence_counts": {"tp": ev_counts.tp, "fp": ev_counts.fp, "fn": ev_counts.fn},
        "flags": flags,
        "provenance": {
            k: v for k, v in result.provenance.items() if k not in ("flags",)
        },
        "error": None,
    }


def _run_one(
    doc: Document,
    pair: ConfigurationPair,
    spec: ExtractorSpec,
    config: ExperimentConfig,
    runtime: GridRuntime,
) -> dict:
    try:
        result = run_pipeline(
            doc,
            pair.stage1,
            pair.stage2,
            spec,
            PipelineProviders(
                extractor_provider=runtime.extractor_provider,
                embeddings=runtime.embeddings,
                reranker=runtime.reranker,
            ),
            mode=config.mode,
        )
        return _score_and_serialize(doc, result, config, runtime, pair.name)
    except OracleUnavailableError as exc:
        logger.warning("skipping %s under %s: %s", doc.id, pair.name, exc)
        return {"doc_id": doc.id, "config": pair.name, "error": f"oracle_unavailable: {exc}"}
    except ProviderError as exc:
        logger.error("provider failure for %s under %s: %s", doc.id, pair.name, exc)
        return {"doc_id": doc.id, "config": pair.name, "error": f"provider_error: {exc}"}


def _write_json(path: Path, body: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, ensure_ascii=False, sort_keys=True), encoding="utf-8")


def load_artifact(
    out_dir: Path, spec: ExtractorSpec, config_name: str, doc_id: str
) -> Optional[dict]:
    path = artifact_path(out_dir, spec, config_name, doc_id)
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def aggregate_rows(
    config: ExperimentConfig,
    corpus: Sequence[Document],
) -> list[ResultRow]:
    """Recompute all result rows from the artifacts on disk."""
    rows: list[ResultRow] = []
    for spec in config.extractors:
        for pair in config.configurations:
            hyp_counts: list[MatchCounts] = []
            ev_total = Counts()
            degradations = {"hypothesis": 0, "evidence": 0}
            n_docs = 0
            for doc in corpus:
                body = load_artifact(config.out_dir, spec, pair.name, doc.id)
                if body is None or body.get("error"):
                    continue
                n_docs += 1
                hc = body["hypothesis_counts"]
                hyp_counts.append(MatchCounts(**hc))
                ec = body["evidence_counts"]
                ev_total = ev_total + Counts(**ec)
                flags = body.get("flags", [])
                if any(f.startswith("stage1:") for f in flags):
                    degradations["hypothesis"] += 1
                if any(f.startswith("stage2:") for f in flags):
                    degradations["evidence"] += 1
            hyp_prf = micro_prf(hyp_counts)
            ev_prf = counts_prf(ev_total)
            for stage, prf in (("hypothesis", hyp_prf), ("evidence", ev_prf)):
                rows.append(
                    ResultRow(
                        extractor=spec.model_id,
                        extraction_mode=spec.mode.value,
                        config=pair.name,
                        stage=stage,
                        precision=prf.precision,
                        recall=prf.recall,
                        f1=prf.f1,
                        n_docs=n_docs,
                        degradations=degradations[stage],
                    )
                )
    return rows


def _check_oracle_feasible(config: ExperimentConfig, corpus: Sequence[Document]) -> None:
    for pair in config.configurations:
        for stage_cfg, gold_attr in (
            (pair.stage1, "gold_hyp_para"),
            (pair.stage2, "gold_ev_para"),
        ):
            if stage_cfg.kind == ContextKind.ORACLE and not any(
                getattr(doc.trace, gold_attr) is not None for doc in corpus
            ):
                raise ConfigError(
                    f"configuration {pair.name!r} needs at least one document "
                    f"with a resolved {gold_attr}"
                )


def run_grid(config: ExperimentConfig, runtime: GridRuntime) -> list[ResultRow]:
    """Run every (extractor, configuration, document) work item, then aggregate.

    Existing artifacts are kept as-is (resume); failures are recorded per
    document and leave n_docs smaller rather than aborting the grid.
    """
    corpus = load_corpus(config.corpus_path)
    _check_oracle_feasible(config, corpus)
    for spec in config.extractors:
        if spec.temperature != 0.0:
            logger.warning(
                "extractor %s runs at temperature %s; reported rows assume 0",
                spec.model_id,
                spec.temperature,
            )
    work: list[tuple[Document, ConfigurationPair, ExtractorSpec]] = []
    for spec in config.extractors:
        for pair in config.configurations:
            for doc in corpus:
                if load_artifact(config.out_dir, spec, pair.name, doc.id) is None:
                    work.append((doc, pair, spec))

    def job(item: tuple[Document, ConfigurationPair, ExtractorSpec]) -> None:
        doc, pair, spec = item
        body = _run_one(doc, pair, spec, config, runtime)
        _write_json(artifact_path(config.out_dir, spec, pair.name, doc.id), body)

    if config.workers > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(job, work))
    else:
        for item in work:
            job(item)

    rows = aggregate_rows(config, corpus)
    rows_path = config.out_dir / "rows.json"
    _write_json(rows_path, {"rows": [row.__dict__ for row in rows]})
    return rows


def _format_float(value: float) -> str:
    return f"{value:.4f}"


def emit_report(
    rows: Sequence[ResultRow],
    diagnostics: Optional[dict[str, Sequence[dict]]] = None,
    out_dir: str | Path = "runs",
) -> list[Path]:
    """Write results.csv plus a readable results.txt, and any diagnostic CSVs.

    Output is fully deterministic: row order follows the configured grid
    order and floats are fixed-format.
    """
    if not rows:
        raise ValueError("no result rows to report")
    out_dir = Path(out_dir)
    reports = out_dir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    csv_path = reports / "results.csv"
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["extractor", "mode", "config", "stage", "precision", "recall", "f1", "n_docs", "degradations"]
    )
    for row in rows:
        writer.writerow(
            [
                row.extractor,
                row.extraction_mode,
                row.config,
                row.stage,
                _format_float(row.precision),
                _format_float(row.recall),
                _format_float(row.f1),
                row.n_docs,
                row.degradations,
            ]
        )
    csv_path.write_text(buffer.getvalue(), encoding="utf-8")
    written.append(csv_path)

    txt_path = reports / "results.txt"
    lines = []
    header = f"{'config':<24} {'stage':<11} {'P':>8} {'R':>8} {'F1':>8} {'n':>5} {'degr':>5}"
    previous_extractor = None
    for row in rows:
        extractor_label = f"{row.extractor} ({row.extraction_mode})"
        if extractor_label != previous_extractor:
            if previous_extractor is not None:
                lines.append("")
            lines.append(extractor_label)
            lines.append(header)
            lines.append("-" * len(header))
            previous_extractor = extractor_label
        lines.append(
            f"{row.config:<24} {row.stage:<11} "
            f"{_format_float(row.precision):>8} {_format_float(row.recall):>8} "
            f"{_format_float(row.f1):>8} {row.n_docs:>5} {row.degradations:>5}"
        )
    lines.append("")
    txt_path.write_text("\n".join(lines), encoding="utf-8")
    written.append(txt_path)

    diagnostics = diagnostics or {}
    if not diagnostics:
        notice = reports / "diagnostics_notice.txt"
        notice.write_text("no diagnostics were supplied for this report\n", encoding="utf-8")
        written.append(notice)
    for name, entries in sorted(diagnostics.items()):
        diag_path = reports / f"{name}.csv"
        buffer = io.StringIO()
        if name == "rsp":
            buffer.write("# bins are left-closed right-open; the final bin (>5%) includes 0.05\n")
        if entries:
            writer = csv.DictWriter(buffer, fieldnames=list(entries[0].keys()), lineterminator="\n")
            writer.writeheader()
            writer.writerows(entries)
        diag_path.write_text(buffer.getvalue(), encoding="utf-8")
        written.append(diag_path)
    return written


def _stored_context(doc: Document, body: dict, which: str, pair_cfg: ContextConfig) -> Context:
    indices = tuple(body[which]["paragraph_indices"])
    return Context(
        stage=Stage.HYPOTHESIS if which == "context1" else Stage.EVIDENCE,
        paragraph_indices=indices,
        texts=tuple(doc.paragraphs[i].text for i in indices),
        config_used=pair_cfg,
    )


def rsp_diagnostic(
    config: ExperimentConfig,
    corpus: Sequence[Document],
    spec: ExtractorSpec,
    runtime: GridRuntime,
) -> list[dict]:
    """Signal-density rows (doc, config, rsp, bin) from stored stage-1 contexts."""
    rows: list[dict] = []
    for pair in config.configurations:
        for doc in corpus:
            body = load_artifact(config.out_dir, spec, pair.name, doc.id)
            if body is None or body.get("error"):
                continue
            context = _stored_context(doc, body, "context1", pair.stage1)
            value = rsp(
                context, doc.trace.gold_hypothesis, config.tau, runtime.embeddings, config.eval_spec
            )
            rows.append(
                {
                    "doc_id": doc.id,
                    "config": pair.name,
                    "rsp": f"{value:.6f}",
                    "bin": bin_rsp(value).label,
                }
            )
    return rows


def transition_diagnostic(
    config: ExperimentConfig,
    corpus: Sequence[Document],
    spec: ExtractorSpec,
    transitions: Sequence[tuple[str, str]],
) -> tuple[list[dict], list[dict]]:
    """Per-paper and per-bucket transition rows from stored stage-2 contexts.

    Contexts are read back from artifacts rather than re-retrieved, so the
    comparison sees exactly what each configuration used.  Documents without
    a resolved gold evidence paragraph are skipped and logged.
    """
    detail: list[dict] = []
    summary: list[dict] = []
    for src_name, tgt_name in transitions:
        rows: list[TransitionRow] = []
        for doc in corpus:
            gold_idx = doc.trace.gold_ev_para
            if gold_idx is None:
                logger.info("transition %s->%s: skipping %s (no gold index)", src_name, tgt_name, doc.id)
                continue
            src_body = load_artifact(config.out_dir, spec, src_name, doc.id)
            tgt_body = load_artifact(config.out_dir, spec, tgt_name, doc.id)
            if not src_body or not tgt_body or src_body.get("error") or tgt_body.get("error"):
                continue
            bucket = transition_bucket(
                src_body["context2"]["paragraph_indices"],
                tgt_body["context2"]["paragraph_indices"],
                gold_idx,
            )
            f1_src = counts_prf(Counts(**src_body["evidence_counts"])).f1
            f1_tgt = counts_prf(Counts(**tgt_body["evidence_counts"])).f1
            rows.append(TransitionRow(doc_id=doc.id, bucket=bucket, f1_src=f1_src, f1_tgt=f1_tgt))
            detail.append(
                {
                    "doc_id": doc.id,
                    "src_config": src_name,
                    "tgt_config": tgt_name,
                    "bucket": bucket.value,
                    "f1_src": _format_float(f1_src),
                    "f1_tgt": _format_float(f1_tgt),
                    "delta": _format_float(f1_tgt - f1_src),
                }
            )
        if rows:
            for bucket, item in sorted(bucket_delta_f1(rows).items(), key=lambda kv: kv[0].value):
                summary.append(
                    {
                        "src_config": src_name,
                        "tgt_config": tgt_name,
                        "bucket": bucket.value,
                        "mean_delta_f1": _format_float(item.mean_delta_f1),
                        "count": item.count,
                        "fraction": _format_float(item.fraction),
                    }
                )
    return detail, summary
