"""CTR metrics (AUC, accuracy) and top-K metrics (precision, recall, F1)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, NamedTuple

import numpy as np
from scipy.stats import rankdata


class PredictionRecord(NamedTuple):
    user: int
    item: int
    label: int
    score: float


def _unpack(records) -> tuple[np.ndarray, np.ndarray]:
    records = list(records)
    labels = np.array([r.label for r in records], dtype=np.int64)
    scores = np.array([r.score for r in records], dtype=np.float64)
    return labels, scores


def auc_from_arrays(labels: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUC with ties counted as one half."""
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)  # average ranks for ties
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc(records: Iterable[PredictionRecord]) -> float:
    return auc_from_arrays(*_unpack(records))


def accuracy_from_arrays(labels: np.ndarray, scores: np.ndarray, threshold: float = 0.5) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty record set")
    return float(np.mean((np.asarray(scores) >= threshold) == (labels == 1)))


def accuracy(records: Iterable[PredictionRecord], threshold: float = 0.5) -> float:
    return accuracy_from_arrays(*_unpack(records), threshold=threshold)


def rank_items(scores: Mapping[Hashable, float], k: int) -> list:
    """Top ``k`` items by descending score; ties go to the smaller item id."""
    return sorted(scores, key=lambda item: (-scores[item], item))[:k]


@dataclass(frozen=True)
class TopK:
    k: int
    precision: float
    recall: float
    f1: float
    users: int


def topk_metrics(
    scores: Mapping[Hashable, Mapping[Hashable, float]],
    positives: Mapping[Hashable, set],
    k: int,
) -> TopK:
    """Macro-averaged precision/recall/F1 at ``k``.

    ``scores[user]`` holds the candidate items for that user (train positives
    already removed by the caller). Users without test positives are skipped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ps, rs, fs = [], [], []
    for user, cand in scores.items():
        truth = positives.get(user, set())
        if not truth:
            continue
        hits = len(set(rank_items(cand, k)) & truth)
        p, r = hits / k, hits / len(truth)
        ps.append(p)
        rs.append(r)
        fs.append(0.0 if hits == 0 else 2 * p * r / (p + r))
    if not ps:
        return TopK(k, 0.0, 0.0, 0.0, 0)
    return TopK(k, float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs)), len(ps))
