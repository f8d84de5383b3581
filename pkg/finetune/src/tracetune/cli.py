"""CLI: mine triplets from a corpus, train the dual-head retriever, export sidecars."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from claimtrace.corpus import load_corpus
from claimtrace.embedding import EmbeddingCache, EmbeddingService, MockEmbeddingProvider
from claimtrace.mining import Triplet, TripletTask, build_triplets

from .export import export_embeddings
from .training import TrainConfig, base_spec, load_artifacts, save_artifacts, train_retriever

logger = logging.getLogger(__name__)


def _service(args) -> EmbeddingService:
    cache = EmbeddingCache(args.cache_dir) if args.cache_dir else None
    return EmbeddingService(
        providers={"mock": MockEmbeddingProvider(dim=args.mock_dim)}, cache=cache
    )


def _triplets_to_file(triplets, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(
                json.dumps(
                    {
                        "task": t.task.value,
                        "anchor": t.anchor,
                        "positive": t.positive,
                        "negative": t.negative,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def _triplets_from_file(path: Path) -> list[Triplet]:
    triplets = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            body = json.loads(line)
            triplets.append(
                Triplet(
                    task=TripletTask(body["task"]),
                    anchor=body["anchor"],
                    positive=body["positive"],
                    negative=body["negative"],
                )
            )
    return triplets


def cmd_mine(args) -> int:
    corpus = load_corpus(args.corpus)
    service = _service(args)
    triplets = build_triplets(corpus, service, base_spec(args.encoder), tau=args.tau)
    _triplets_to_file(triplets, Path(args.out))
    print(f"mined {len(triplets)} triplets from {len(corpus)} documents -> {args.out}")
    return 0


def cmd_train(args) -> int:
    triplets = _triplets_from_file(Path(args.triplets))
    cfg = TrainConfig(
        margin=args.margin,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        encoder_id=args.encoder,
    )
    result = train_retriever(triplets, cfg, _service(args))
    save_artifacts(result, args.out)
    means = result.epoch_means()
    first, last = means[min(means)], means[max(means)]
    print(f"trained {cfg.epochs} epochs on {len(triplets)} triplets; "
          f"mean loss {first:.4f} -> {last:.4f}; artifacts in {args.out}")
    return 0


def cmd_export(args) -> int:
    result = load_artifacts(args.artifacts)
    corpus = load_corpus(args.corpus)
    written = export_embeddings(
        result, corpus, _service(args), args.sidecar_dir, include_queries=args.include_queries
    )
    print(f"wrote {written} sidecar records to {args.sidecar_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tracetune", description="Fine-tune the within-document paragraph retriever."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--encoder", default="mock", help="base embedding provider id")
    common.add_argument("--cache-dir")
    common.add_argument("--mock-dim", type=int, default=32)

    p_mine = sub.add_parser("mine", parents=[common], help="mine hard-negative triplets")
    p_mine.add_argument("corpus")
    p_mine.add_argument("--tau", type=float, default=0.89)
    p_mine.add_argument("--out", default="triplets.jsonl")
    p_mine.set_defaults(func=cmd_mine)

    p_train = sub.add_parser("train", parents=[common], help="train the dual-head retriever")
    p_train.add_argument("triplets")
    p_train.add_argument("--margin", type=float, default=0.2)
    p_train.add_argument("--lr", type=float, default=0.01)
    p_train.add_argument("--epochs", type=int, default=5)
    p_train.add_argument("--batch-size", type=int, default=16)
    p_train.add_argument("--seed", type=int, default=13)
    p_train.add_argument("--out", default="retriever_artifacts")
    p_train.set_defaults(func=cmd_train)

    p_export = sub.add_parser("export", parents=[common], help="export sidecar embeddings")
    p_export.add_argument("artifacts")
    p_export.add_argument("corpus")
    p_export.add_argument("--sidecar-dir", required=True)
    p_export.add_argument(
        "--include-queries",
        action="store_true",
        help="also export per-document retrieval queries (enables provider-free "
        "ground-truth-hypothesis runs)",
    )
    p_export.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
