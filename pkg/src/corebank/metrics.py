"""Threshold-free evaluation: AUROC, average precision, forgetting.

AUROC is the exact Mann-Whitney statistic computed from average ranks, so
tied scores contribute half credit per pair. Average precision sums
delta-recall times precision over descending-score cut points with equal
scores entering as one group, which keeps the value independent of how a
sort orders ties. The forgetting measure compares each task's current
metric value against the best value any earlier stage achieved on it;
negative forgetting (late improvement) is reported as is.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .validation import as_label_vector


@dataclass
class ScoredSet:
    """Scores with binary ground-truth labels, image- or pixel-level."""

    scores: np.ndarray
    labels: np.ndarray
    kind: str = "image"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = as_label_vector(self.labels, "labels")
        if self.scores.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.scores.shape[0]} scores vs {self.labels.shape[0]} labels"
            )
        if self.scores.shape[0] == 0:
            raise ValueError("scored set is empty")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores contain NaN/Inf")
        if self.kind not in ("image", "pixel"):
            raise ValueError(f"kind must be 'image' or 'pixel', got {self.kind!r}")


@dataclass
class MetricMatrix:
    """Lower-triangular per-stage metric values.

    rows[l][j] is the value on task j measured after training stage l
    (0-based here; row l has l + 1 entries since only seen tasks are
    evaluated).
    """

    rows: list
    metric_kind: str = "I-AUROC"

    def __post_init__(self):
        for l, row in enumerate(self.rows):
            if len(row) != l + 1:
                raise ValueError(
                    f"stage {l} row has {len(row)} entries, expected {l + 1}"
                )


def auroc(s: ScoredSet) -> float:
    """Probability a positive outranks a negative, ties counted half.

    Needs both classes present.
    """
    pos = s.labels == 1
    n_pos = int(pos.sum())
    n_neg = s.labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"AUROC needs both classes, got {n_pos} positives / {n_neg} negatives"
        )
    ranks = stats.rankdata(s.scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(s: ScoredSet) -> float:
    """Average precision over descending-score cut points, ties grouped.

    Needs at least one positive.
    """
    n_pos = int((s.labels == 1).sum())
    if n_pos == 0:
        raise ValueError("AUPR needs at least one positive")
    order = np.argsort(-s.scores, kind="stable")
    y = s.labels[order]
    sc = s.scores[order]
    n = sc.shape[0]
    # last index of every tie group = a prefix cut point
    cuts = np.append(np.where(np.diff(sc) != 0)[0], n - 1)
    tp = np.cumsum(y)[cuts].astype(np.float64)
    precision = tp / (cuts + 1.0)
    recall = tp / n_pos
    delta = np.diff(np.concatenate(([0.0], recall)))
    return float((delta * precision).sum())


def forgetting(mm, k: int | None = None) -> tuple[list[float], float]:
    """Per-task forgetting at stage k and its mean.

    mm is a MetricMatrix or a plain list of per-stage rows. k counts stages
    from 1 (the printed convention), defaulting to the last stage; it must
    be >= 2. For each earlier task j the forgetting is the best value any
    stage before k achieved on j minus the stage-k value, so improvements
    show up negative.
    """
    rows = mm.rows if isinstance(mm, MetricMatrix) else mm
    if k is None:
        k = len(rows)
    if k < 2:
        raise ValueError(f"forgetting needs at least 2 stages, got k = {k}")
    if len(rows) < k:
        raise ValueError(f"matrix has {len(rows)} stages, stage {k} requested")
    per_task = []
    for j in range(k - 1):  # tasks seen strictly before stage k
        best_earlier = max(rows[l][j] for l in range(j, k - 1))
        per_task.append(float(best_earlier - rows[k - 1][j]))
    return per_task, float(np.mean(per_task))
