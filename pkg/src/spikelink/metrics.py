"""Link-prediction ranking metrics: AUC and average precision."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def auc(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Probability that a random positive outranks a random negative.

    Ties count 0.5. Computed from rank statistics in O(n log n).
    """
    pos = np.asarray(scores_pos, dtype=np.float64).ravel()
    neg = np.asarray(scores_neg, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc requires at least one positive and one negative score")
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(combined.size, dtype=np.float64)
    ranks[order] = np.arange(1, combined.size + 1)
    # average ranks within tie groups
    sorted_scores = combined[order]
    i = 0
    while i < sorted_scores.size:
        j = i
        while j + 1 < sorted_scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    u_stat = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u_stat / (pos.size * neg.size))


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean of precision-at-k over the ranks k of the positives.

    Scores sorted descending; ties broken by original index (stable).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision requires at least one positive label")
    order = np.argsort(-scores, kind="mergesort")
    ranked = labels[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, ranked.size + 1)
    precisions = hits[ranked == 1] / ranks[ranked == 1]
    return float(precisions.mean())


@dataclass
class MetricReport:
    """Per-seed test metrics with their mean and spread."""

    dataset: str
    seeds: list[int]
    auc_values: list[float]
    ap_values: list[float]
    auc_mean: float = field(init=False)
    auc_std: float = field(init=False)
    ap_mean: float = field(init=False)
    ap_std: float = field(init=False)

    def __post_init__(self) -> None:
        if len(self.seeds) != len(self.auc_values) or len(self.seeds) != len(self.ap_values):
            raise ValueError("seed and metric lists must align")
        self.auc_mean = float(np.mean(self.auc_values))
        self.auc_std = float(np.std(self.auc_values))
        self.ap_mean = float(np.mean(self.ap_values))
        self.ap_std = float(np.std(self.ap_values))

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "seeds": [int(s) for s in self.seeds],
            "auc_values": [float(v) for v in self.auc_values],
            "ap_values": [float(v) for v in self.ap_values],
            "auc_mean": self.auc_mean,
            "auc_std": self.auc_std,
            "ap_mean": self.ap_mean,
            "ap_std": self.ap_std,
        }
