"""Dual-head retriever fine-tuning with a multi-task triplet loss.

The base encoder stays frozen: texts are embedded once through the primary
package's embedding service, and training optimizes a small shared trunk
plus one linear projection head per task (hypothesis retrieval, evidence
retrieval).  Each triplet contributes max(0, d(a,p) - d(a,n) + margin) with
d = 1 - cosine, routed through the head matching its task.  Tasks are mixed
uniformly within batches.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from claimtrace.embedding import EmbeddingService, EmbeddingSpec, Head
from claimtrace.mining import Triplet, TripletTask

logger = logging.getLogger(__name__)


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.2
    learning_rate: float = 0.01
    epochs: int = 5
    batch_size: int = 16
    seed: int = 13
    encoder_id: str = "mock"
    hidden_dim: int = 32
    projection_dim: int = 16

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def content_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class DualHeadEncoder(nn.Module):
    """Shared trunk over frozen base embeddings, one projection head per task."""

    def __init__(self, input_dim: int, hidden_dim: int, projection_dim: int):
        super().__init__()
        self.input_dim = input_dim
        self.trunk = nn.Linear(input_dim, hidden_dim)
        self.heads = nn.ModuleDict(
            {
                TripletTask.HYPOTHESIS.value: nn.Linear(hidden_dim, projection_dim),
                TripletTask.EVIDENCE.value: nn.Linear(hidden_dim, projection_dim),
            }
        )

    def forward(self, x: torch.Tensor, task: TripletTask) -> torch.Tensor:
        hidden = torch.tanh(self.trunk(x))
        projected = self.heads[task.value](hidden)
        return nn.functional.normalize(projected, dim=-1)


@dataclass
class EpochStats:
    epoch: int
    task: str
    mean_loss: float
    n_triplets: int


@dataclass
class TrainingResult:
    model: DualHeadEncoder
    config: TrainConfig
    log: list[EpochStats] = field(default_factory=list)

    def epoch_means(self) -> dict[int, float]:
        """Mean loss per epoch pooled over tasks (weighted by triplet count)."""
        sums: dict[int, list[float]] = {}
        for row in self.log:
            sums.setdefault(row.epoch, [0.0, 0.0])
            sums[row.epoch][0] += row.mean_loss * row.n_triplets
            sums[row.epoch][1] += row.n_triplets
        return {epoch: total / n for epoch, (total, n) in sums.items()}


# The base provider exposes one space; the trunk+heads create the two
# task-specific spaces on top of it.
BASE_SPEC_HEAD = Head.RETRIEVAL_HYPOTHESIS


def base_spec(encoder_id: str) -> EmbeddingSpec:
    return EmbeddingSpec(provider_id=encoder_id, head=BASE_SPEC_HEAD)


def _embed_matrix(
    texts: Sequence[str], embeddings: EmbeddingService, spec: EmbeddingSpec
) -> torch.Tensor:
    vectors = embeddings.embed(list(texts), spec)
    return torch.tensor(np.stack(vectors), dtype=torch.float32)


def triplet_losses(
    model: DualHeadEncoder,
    anchors: torch.Tensor,
    positives: torch.Tensor,
    negatives: torch.Tensor,
    task: TripletTask,
    margin: float,
) -> torch.Tensor:
    a = model(anchors, task)
    p = model(positives, task)
    n = model(negatives, task)
    # d = 1 - cos, so d(a,p) - d(a,n) = cos(a,n) - cos(a,p)
    return torch.relu((a * n).sum(-1) - (a * p).sum(-1) + margin)


def train_retriever(
    triplets: Sequence[Triplet],
    cfg: TrainConfig,
    embeddings: EmbeddingService,
) -> TrainingResult:
    """Optimize trunk and heads on the mined triplets; returns model plus the
    per-epoch, per-task loss log."""
    if not triplets:
        raise TrainingError("no triplets to train on")
    tasks_present = {t.task for t in triplets}
    if len(tasks_present) == 1:
        logger.warning(
            "only the %s task is represented; training a single head",
            next(iter(tasks_present)).value,
        )

    spec = base_spec(cfg.encoder_id)
    anchor_mat = _embed_matrix([t.anchor for t in triplets], embeddings, spec)
    positive_mat = _embed_matrix([t.positive for t in triplets], embeddings, spec)
    negative_mat = _embed_matrix([t.negative for t in triplets], embeddings, spec)

    torch.manual_seed(cfg.seed)
    model = DualHeadEncoder(anchor_mat.shape[1], cfg.hidden_dim, cfg.projection_dim)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    rng = random.Random(cfg.seed)

    result = TrainingResult(model=model, config=cfg)
    order = list(range(len(triplets)))
    for epoch in range(1, cfg.epochs + 1):
        rng.shuffle(order)
        task_losses: dict[TripletTask, list[float]] = {t: [] for t in tasks_present}
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            optimizer.zero_grad()
            batch_loss = torch.tensor(0.0)
            for task in tasks_present:
                idx = [i for i in batch if triplets[i].task == task]
                if not idx:
                    continue
                losses = triplet_losses(
                    model,
                    anchor_mat[idx],
                    positive_mat[idx],
                    negative_mat[idx],
                    task,
                    cfg.margin,
                )
                task_losses[task].extend(losses.detach().tolist())
                batch_loss = batch_loss + losses.sum()
            if not torch.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} (lr={cfg.learning_rate}, "
                    f"margin={cfg.margin})"
                )
            (batch_loss / max(1, len(batch))).backward()
            optimizer.step()
        for task, losses in sorted(task_losses.items(), key=lambda kv: kv[0].value):
            if losses:
                result.log.append(
                    EpochStats(
                        epoch=epoch,
                        task=task.value,
                        mean_loss=sum(losses) / len(losses),
                        n_triplets=len(losses),
                    )
                )
    return result


def margin_satisfaction_rate(
    result: TrainingResult,
    triplets: Sequence[Triplet],
    embeddings: EmbeddingService,
) -> float:
    """Fraction of triplets with cos(anchor, positive) > cos(anchor, negative)."""
    spec = base_spec(result.config.encoder_id)
    model = result.model
    satisfied = 0
    with torch.no_grad():
        for triplet in triplets:
            a, p, n = (
                _embed_matrix([text], embeddings, spec)
                for text in (triplet.anchor, triplet.positive, triplet.negative)
            )
            ap = float((model(a, triplet.task) * model(p, triplet.task)).sum())
            an = float((model(a, triplet.task) * model(n, triplet.task)).sum())
            if ap > an:
                satisfied += 1
    return satisfied / len(triplets)


def save_artifacts(result: TrainingResult, out_dir: str | Path) -> Path:
    """Persist model weights, config manifest, and the training-log CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(result.model.state_dict(), out_dir / "model.pt")
    manifest = {
        "config": asdict(result.config),
        "config_hash": result.config.content_hash(),
        "input_dim": result.model.input_dim,
        "seed": result.config.seed,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    with (out_dir / "training_log.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "task", "mean_loss", "n_triplets"])
        for row in result.log:
            writer.writerow([row.epoch, row.task, f"{row.mean_loss:.6f}", row.n_triplets])
    return out_dir


def load_artifacts(artifact_dir: str | Path) -> TrainingResult:
    artifact_dir = Path(artifact_dir)
    manifest = json.loads((artifact_dir / "manifest.json").read_text(encoding="utf-8"))
    cfg = TrainConfig(**manifest["config"])
    model = DualHeadEncoder(manifest["input_dim"], cfg.hidden_dim, cfg.projection_dim)
    model.load_state_dict(torch.load(artifact_dir / "model.pt", weights_only=True))
    model.eval()
    return TrainingResult(model=model, config=cfg)
