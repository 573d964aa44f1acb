"""Evaluation metrics: RMSE for regression, P@K and MAP@K for ranked targets.

MAP@K uses the KDD Cup 2012 convention: the average precision of a query is
normalised by ``min(K, #relevant)`` and queries without relevant targets are
left out of the mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RankedQueryResult",
    "rmse",
    "precision_at_k",
    "average_precision_at_k",
    "map_at_k",
    "rank_queries",
]


@dataclass(frozen=True)
class RankedQueryResult:
    """Targets of one query sorted by descending score, ties by ascending target id."""

    query: int
    targets: np.ndarray
    scores: np.ndarray
    relevant: frozenset

    @classmethod
    def from_scores(cls, query, targets, scores, relevant) -> RankedQueryResult:
        targets = np.asarray(targets, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        order = np.lexsort((targets, -scores))
        return cls(int(query), targets[order], scores[order], frozenset(int(t) for t in relevant))

    @property
    def hits(self) -> np.ndarray:
        return np.fromiter((t in self.relevant for t in self.targets), dtype=bool, count=self.targets.size)


def rmse(predictions, truths) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape:
        raise ValueError("predictions and truths differ in length")
    if predictions.size == 0:
        raise ValueError("rmse of an empty sequence")
    return math.sqrt(float(np.mean(np.square(predictions - truths))))


def precision_at_k(result: RankedQueryResult, K: int) -> float:
    if K < 1:
        raise ValueError("K must be >= 1")
    if result.targets.size == 0:
        raise ValueError(f"query {result.query} has an empty ranking")
    return float(result.hits[:K].sum()) / K


def average_precision_at_k(result: RankedQueryResult, K: int) -> float:
    if K < 1:
        raise ValueError("K must be >= 1")
    n_rel = len(result.relevant)
    if n_rel == 0:
        raise ValueError(f"query {result.query} has no relevant target")
    hits = result.hits[:K]
    ranks = np.arange(1, hits.size + 1)
    precisions = np.cumsum(hits) / ranks
    return float(precisions[hits].sum()) / min(K, n_rel)


def map_at_k(results, K: int) -> float:
    scored = [average_precision_at_k(r, K) for r in results if r.relevant]
    if not scored:
        raise ValueError("no query has a relevant target")
    return float(np.mean(scored))


def rank_queries(queries, targets, scores, labels) -> list[RankedQueryResult]:
    """Group scored ``(query, target)`` candidates into per-query rankings.

    A candidate is relevant when its label is positive.
    """
    queries = np.asarray(queries, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    order = np.argsort(queries, kind="stable")
    queries, targets, scores, labels = queries[order], targets[order], scores[order], labels[order]
    cuts = np.flatnonzero(np.diff(queries)) + 1
    out = []
    for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, queries.size]):
        if lo == hi:
            continue
        rel = targets[lo:hi][labels[lo:hi] > 0]
        out.append(RankedQueryResult.from_scores(queries[lo], targets[lo:hi], scores[lo:hi], rel))
    return out
