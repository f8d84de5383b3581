"""Retriever fine-tuning: triplet training over mined hard negatives, sidecar export."""

from claimtrace.mining import Triplet, TripletTask, build_triplets, mine_hard_negative

from .export import (
    FINETUNED_PROVIDER_ID,
    ExportError,
    FinetunedEmbeddingProvider,
    export_embeddings,
)
from .training import (
    DualHeadEncoder,
    EpochStats,
    TrainConfig,
    TrainingError,
    TrainingResult,
    base_spec,
    load_artifacts,
    margin_satisfaction_rate,
    save_artifacts,
    train_retriever,
)

__version__ = "0.1.0"
