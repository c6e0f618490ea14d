"""Top-K evaluation: Recall@K, NDCG@K, and a popularity baseline.

Protocol: Recall@K = |top-K intersect held-out| / |held-out| (uncapped
denominator); NDCG@K uses binary relevance with gain 1/log2(rank+1) and an
ideal DCG over min(K, |held-out|) placements. Validation-stage candidate
pools exclude only train items; test-stage pools exclude train and val.
Users with an empty held-out set are skipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DatasetSplit
from .errors import ProtocolError


def recall_at_k(ranked, relevant, k: int) -> float:
    relevant = set(np.asarray(relevant).tolist())
    if not relevant:
        raise ValueError("relevant set is empty")
    hits = sum(1 for item in list(ranked)[:k] if item in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, k: int) -> float:
    relevant = set(np.asarray(relevant).tolist())
    if not relevant:
        raise ValueError("relevant set is empty")
    dcg = sum(1.0 / math.log2(pos + 1)
              for pos, item in enumerate(list(ranked)[:k], start=1)
              if item in relevant)
    ideal = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(k, len(relevant)) + 1))
    return dcg / ideal


@dataclass(frozen=True)
class Metrics:
    recall: dict[int, float]
    ndcg: dict[int, float]
    per_user_recall: dict[int, np.ndarray]
    per_user_ndcg: dict[int, np.ndarray]
    n_evaluated: int
    stage: str
    seed: int | None = None


def evaluate(split: DatasetSplit, recommend_fn, ks=(10, 20), stage: str = "test",
             seed: int | None = None) -> Metrics:
    """Average Recall@K and NDCG@K over users with held-out items.

    ``recommend_fn(u)`` must return a ranked item list that already excludes
    the user's train (and, at test stage, val) items; returning any of them
    is a protocol violation and raises.
    """
    if stage not in ("val", "test"):
        raise ValueError(f"stage must be 'val' or 'test', got {stage!r}")
    ks = tuple(int(k) for k in ks)
    per_recall = {k: [] for k in ks}
    per_ndcg = {k: [] for k in ks}
    evaluated = 0
    for u in range(split.n_users):
        relevant = split.held_out(u, stage)
        if relevant.size == 0:
            continue
        ranked = np.asarray(recommend_fn(u))
        bad = np.intersect1d(ranked, split.excluded(u, stage))
        if bad.size:
            raise ProtocolError(
                f"recommender returned already-interacted items {bad.tolist()} for user {u}")
        for k in ks:
            per_recall[k].append(recall_at_k(ranked, relevant, k))
            per_ndcg[k].append(ndcg_at_k(ranked, relevant, k))
        evaluated += 1
    if evaluated == 0:
        raise ValueError(f"no users with {stage} items to evaluate")
    return Metrics(
        recall={k: float(np.mean(per_recall[k])) for k in ks},
        ndcg={k: float(np.mean(per_ndcg[k])) for k in ks},
        per_user_recall={k: np.asarray(per_recall[k]) for k in ks},
        per_user_ndcg={k: np.asarray(per_ndcg[k]) for k in ks},
        n_evaluated=evaluated,
        stage=stage,
        seed=seed,
    )


def popularity_baseline(split: DatasetSplit, n_items: int) -> np.ndarray:
    """Item scores equal to train-interaction counts, shared across users."""
    counts = np.zeros(n_items, dtype=np.float64)
    for r in split.train:
        counts[r] += 1.0
    if counts.sum() == 0:
        raise ValueError("empty training data")
    return counts


def aggregate_runs(runs: list[Metrics]):
    """Mean and standard deviation of each metric over repeated runs."""
    if not runs:
        raise ValueError("no runs to aggregate")
    ks = sorted(runs[0].recall)
    rows = []
    for name, getter in (("recall", lambda m: m.recall), ("ndcg", lambda m: m.ndcg)):
        for k in ks:
            vals = np.asarray([getter(m)[k] for m in runs])
            rows.append({"metric": name, "k": k,
                         "mean": float(vals.mean()),
                         "std": float(vals.std(ddof=1)) if len(runs) > 1 else 0.0,
                         "runs": len(runs)})
    return rows


def format_table(rows) -> str:
    """Small fixed-width table for aggregated metric rows."""
    lines = [f"{'metric':<10}{'K':>4}{'mean':>12}{'std':>12}{'runs':>6}"]
    for r in rows:
        lines.append(f"{r['metric']:<10}{r['k']:>4}{r['mean']:>12.4f}{r['std']:>12.4f}{r['runs']:>6}")
    return "\n".join(lines)
