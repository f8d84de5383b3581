"""Command-line front end: ingest, embed, calibrate, run, eval, diagnose, report.

Exit codes: 0 success, 2 configuration/input error, 3 provider error,
4 partial completion (some documents failed and were recorded).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import CorpusError, load_corpus, save_corpus
from .embedding import (
    EmbeddingCache,
    EmbeddingService,
    EmbeddingSpec,
    Head,
    HttpEmbeddingProvider,
    MockEmbeddingProvider,
    ProviderUnavailableError,
)
from .eval_hypothesis import CalibrationPair, calibrate_threshold, calibration_grid
from .eval_evidence import RuleBasedEvaluator
from .providers import CachingModelProvider, HttpModelProvider, ProviderError, ScriptedModelProvider
from .retrieval import IdentityReranker, ListwiseLlmReranker
from .runner import (
    ConfigError,
    GridRuntime,
    aggregate_rows,
    emit_report,
    load_artifact,
    load_experiment_config,
    rsp_diagnostic,
    run_grid,
    transition_diagnostic,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_PARTIAL = 4


def _build_embedding_service(args, config=None) -> EmbeddingService:
    cache = EmbeddingCache(args.cache_dir) if getattr(args, "cache_dir", None) else None
    providers = {"mock": MockEmbeddingProvider(dim=getattr(args, "mock_dim", 32))}
    endpoint = getattr(args, "embedding_endpoint", None)
    if endpoint:
        provider_id, url, model = endpoint.split(",", 2)
        providers[provider_id] = HttpEmbeddingProvider(endpoint=url, model=model)
    return EmbeddingService(providers=providers, cache=cache)


def _build_runtime(config, args) -> GridRuntime:
    embeddings = EmbeddingService(
        providers={"mock": MockEmbeddingProvider(dim=args.mock_dim)},
        cache=EmbeddingCache(config.cache_dir) if config.cache_dir else None,
    )
    if args.model_endpoint:
        base = HttpModelProvider(endpoint=args.model_endpoint)
    elif args.fixture:
        base = ScriptedModelProvider.from_fixture(args.fixture)
    else:
        raise ConfigError("supply --model-endpoint for live runs or --fixture for scripted ones")
    cache_dir = (config.cache_dir or config.out_dir) / "responses"
    extractor_provider = CachingModelProvider(base, cache_dir)
    evaluator_provider = (
        RuleBasedEvaluator()
        if config.evaluator_model == "rule-based"
        else CachingModelProvider(base, cache_dir)
    )
    reranker = (
        IdentityReranker()
        if args.reranker == "identity"
        else ListwiseLlmReranker(extractor_provider, args.reranker)
    )
    return GridRuntime(
        extractor_provider=extractor_provider,
        evaluator_provider=evaluator_provider,
        embeddings=embeddings,
        reranker=reranker,
    )


def cmd_ingest(args) -> int:
    try:
        corpus = load_corpus(args.corpus)
    except CorpusError as exc:
        print(f"corpus error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    unresolved = [
        doc.id
        for doc in corpus
        if doc.trace.gold_hyp_para is None or doc.trace.gold_ev_para is None
    ]
    print(f"loaded {len(corpus)} documents")
    if unresolved:
        print(f"unresolved gold spans in {len(unresolved)} documents: {', '.join(unresolved)}")
    if args.out:
        save_corpus(corpus, args.out)
        print(f"normalized corpus written to {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    try:
        corpus = load_corpus(args.corpus)
    except CorpusError as exc:
        print(f"corpus error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    service = _build_embedding_service(args)
    heads = [Head(h) for h in args.heads]
    texts = [p.text for doc in corpus for p in doc.paragraphs]
    try:
        for head in heads:
            spec = EmbeddingSpec(provider_id=args.provider, head=head)
            service.embed(texts, spec)
    except ProviderUnavailableError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    print(f"warmed {len(texts)} paragraph embeddings for heads: {', '.join(h.value for h in heads)}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        records = [
            json.loads(line)
            for line in Path(args.pairs).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        pairs = [
            CalibrationPair(
                predicted=r["predicted"], gold=r["gold"], rubric_score=int(r["rubric_score"])
            )
            for r in records
        ]
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"calibration input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    service = _build_embedding_service(args)
    spec = EmbeddingSpec(
        provider_id=args.provider, head=Head.EVALUATION, task_hint="SEMANTIC_SIMILARITY"
    )
    try:
        grid = calibration_grid(pairs, service, spec)
        tau = calibrate_threshold(pairs, service, spec)
    except ProviderUnavailableError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        fh.write("tau,precision,recall,f1\n")
        for point in grid:
            fh.write(f"{point.tau:.2f},{point.precision:.4f},{point.recall:.4f},{point.f1:.4f}\n")
        fh.write(f"# argmax tau={tau:.2f}\n")
    print(f"selected tau = {tau:.2f}; grid written to {out}")
    return EXIT_OK


def _partial(config, corpus) -> bool:
    for spec in config.extractors:
        for pair in config.configurations:
            for doc in corpus:
                body = load_artifact(config.out_dir, spec, pair.name, doc.id)
                if body is not None and body.get("error"):
                    return True
    return False


def cmd_run(args) -> int:
    try:
        config = load_experiment_config(args.config)
        runtime = _build_runtime(config, args)
        rows = run_grid(config, runtime)
    except (ConfigError, CorpusError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProviderError, ProviderUnavailableError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    emit_report(rows, out_dir=config.out_dir)
    corpus = load_corpus(config.corpus_path)
    print(f"{len(rows)} result rows written under {config.out_dir}")
    return EXIT_PARTIAL if _partial(config, corpus) else EXIT_OK


def cmd_eval(args) -> int:
    try:
        config = load_experiment_config(args.config)
        corpus = load_corpus(config.corpus_path)
    except (ConfigError, CorpusError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = aggregate_rows(config, corpus)
    if all(row.n_docs == 0 for row in rows):
        print("no artifacts found; run the grid first", file=sys.stderr)
        return EXIT_CONFIG
    emit_report(rows, out_dir=config.out_dir)
    print(f"recomputed {len(rows)} rows from artifacts under {config.out_dir}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    try:
        config = load_experiment_config(args.config)
        corpus = load_corpus(config.corpus_path)
    except (ConfigError, CorpusError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    spec = next(
        (s for s in config.extractors if s.model_id == args.extractor), config.extractors[0]
    )
    embeddings = EmbeddingService(
        providers={"mock": MockEmbeddingProvider(dim=args.mock_dim)},
        cache=EmbeddingCache(config.cache_dir) if config.cache_dir else None,
    )
    runtime = GridRuntime(
        extractor_provider=ScriptedModelProvider(),
        evaluator_provider=RuleBasedEvaluator(),
        embeddings=embeddings,
    )
    diagnostics = {}
    diagnostics["rsp"] = rsp_diagnostic(config, corpus, spec, runtime)
    names = [pair.name for pair in config.configurations]
    transitions = list(zip(names, names[1:]))
    detail, summary = transition_diagnostic(config, corpus, spec, transitions)
    diagnostics["transitions"] = detail
    diagnostics["transitions_summary"] = summary
    rows = aggregate_rows(config, corpus)
    if all(row.n_docs == 0 for row in rows):
        print("no artifacts found; run the grid first", file=sys.stderr)
        return EXIT_CONFIG
    written = emit_report(rows, diagnostics, out_dir=config.out_dir)
    print("\n".join(str(p) for p in written))
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        config = load_experiment_config(args.config)
        corpus = load_corpus(config.corpus_path)
    except (ConfigError, CorpusError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = aggregate_rows(config, corpus)
    if all(row.n_docs == 0 for row in rows):
        print("no artifacts found; run the grid first", file=sys.stderr)
        return EXIT_CONFIG
    written = emit_report(rows, out_dir=config.out_dir)
    print("\n".join(str(p) for p in written))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="claimtrace",
        description="Link abstract findings to in-body hypotheses and statistical evidence.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="validate a corpus file and resolve gold spans")
    p_ingest.add_argument("corpus")
    p_ingest.add_argument("--out", help="write the normalized corpus here")
    p_ingest.set_defaults(func=cmd_ingest)

    p_embed = sub.add_parser("embed", help="warm the embedding cache for a corpus")
    p_embed.add_argument("corpus")
    p_embed.add_argument("--provider", default="mock")
    p_embed.add_argument("--cache-dir", required=True)
    p_embed.add_argument("--mock-dim", type=int, default=32)
    p_embed.add_argument("--embedding-endpoint", help="provider_id,url,model for a hosted provider")
    p_embed.add_argument(
        "--heads",
        nargs="+",
        default=[Head.RETRIEVAL_HYPOTHESIS.value, Head.RETRIEVAL_EVIDENCE.value],
    )
    p_embed.set_defaults(func=cmd_embed)

    p_cal = sub.add_parser("calibrate", help="grid-search the semantic-match threshold")
    p_cal.add_argument("pairs", help="newline-delimited JSON: predicted, gold, rubric_score")
    p_cal.add_argument("--provider", default="mock")
    p_cal.add_argument("--cache-dir")
    p_cal.add_argument("--mock-dim", type=int, default=32)
    p_cal.add_argument("--embedding-endpoint")
    p_cal.add_argument("--out", default="calibration_grid.csv")
    p_cal.set_defaults(func=cmd_calibrate)

    p_run = sub.add_parser("run", help="run the experiment grid")
    p_run.add_argument("config")
    p_run.add_argument("--model-endpoint", help="chat-completions URL for live extraction")
    p_run.add_argument("--fixture", help="scripted response fixture for offline runs")
    p_run.add_argument("--reranker", default="identity", help="'identity' or a reranker model id")
    p_run.add_argument("--mock-dim", type=int, default=32)
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="recompute result rows from stored artifacts")
    p_eval.add_argument("config")
    p_eval.set_defaults(func=cmd_eval)

    p_diag = sub.add_parser("diagnose", help="RSP and transition analyses from artifacts")
    p_diag.add_argument("config")
    p_diag.add_argument("--extractor", help="model_id to analyze (default: first configured)")
    p_diag.add_argument("--mock-dim", type=int, default=32)
    p_diag.set_defaults(func=cmd_diagnose)

    p_rep = sub.add_parser("report", help="regenerate report files from artifacts")
    p_rep.add_argument("config")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
