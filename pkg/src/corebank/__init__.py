"""Continual anomaly detection over a shared fixed-capacity embedding coreset."""

from .coreset import (
    MemoryBank,
    UpdateStats,
    covering_radius,
    export_coreset,
    greedy_kcenter,
    random_sample,
)
from .detector import CoresetAnomalyDetector
from .distance import k_nearest, min_pair, nearest, pairwise_distances
from .metrics import MetricMatrix, ScoredSet, aupr, auroc, forgetting
from .pipeline import (
    RunConfig,
    config_from_file,
    emit_time_curve,
    run_joint,
    run_sequence,
    score_one,
)
from .scoring import AnomalyMap, PatchScores, build_map, image_score, score_patches
from .synthetic import generate_dataset
from .tensor_io import (
    EmbeddingBatch,
    MemoryBankSnapshot,
    TaskDataset,
    load_bank,
    load_task,
    read_tensor,
    save_bank,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalyMap",
    "CoresetAnomalyDetector",
    "EmbeddingBatch",
    "MemoryBank",
    "MemoryBankSnapshot",
    "MetricMatrix",
    "PatchScores",
    "RunConfig",
    "ScoredSet",
    "TaskDataset",
    "UpdateStats",
    "aupr",
    "auroc",
    "build_map",
    "config_from_file",
    "covering_radius",
    "emit_time_curve",
    "export_coreset",
    "forgetting",
    "generate_dataset",
    "greedy_kcenter",
    "image_score",
    "k_nearest",
    "load_bank",
    "load_task",
    "min_pair",
    "nearest",
    "pairwise_distances",
    "random_sample",
    "read_tensor",
    "run_joint",
    "run_sequence",
    "save_bank",
    "score_one",
    "score_patches",
    "write_tensor",
]
