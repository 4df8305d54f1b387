"""Click-through-rate and ranking metrics."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError


def auc(scores, labels):
    """Probability that a random positive outscores a random negative.

    Ties count one half; computed via the rank-sum identity in O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DomainError("auc is undefined unless both classes are present")
    ranks = rankdata(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1(scores, labels, threshold=0.5):
    """Binary F1 with `score >= threshold` as the positive prediction."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores >= threshold
    tp = int((pred & (labels == 1)).sum())
    fp = int((pred & (labels == 0)).sum())
    fn = int((~pred & (labels == 1)).sum())
    if tp + fp == 0:
        warnings.warn("f1: no predicted positives at this threshold")
        return 0.0
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2.0 * precision * recall / (precision + recall))


def recall_from_ranking(ranked_items, relevant_items, k):
    """Recall@k for one user given a full ranking and their relevant set."""
    if k < 1:
        raise DomainError(f"recall@k needs k >= 1, got {k}")
    relevant = set(int(i) for i in relevant_items)
    if not relevant:
        raise DomainError("recall is undefined for a user with no relevant items")
    hits = sum(1 for i in ranked_items[:k] if int(i) in relevant)
    return hits / len(relevant)
