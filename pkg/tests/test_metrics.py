import itertools
import math

import numpy as np
import pytest

from sdiff.data import DatasetSplit, interactions_from_rows, split_dataset
from sdiff.errors import ProtocolError
from sdiff.metrics import (
    aggregate_runs,
    evaluate,
    format_table,
    ndcg_at_k,
    popularity_baseline,
    recall_at_k,
)
from sdiff.sampling import recommend_topk


def brute_force_metrics(ranked, relevant, k):
    """Naive oracle: positional DCG sums and a brute-force ideal DCG taken as
    the max DCG over every permutation of the candidate ranking."""
    relevant = set(relevant)
    hits = len([i for i in ranked[:k] if i in relevant])
    recall = hits / len(relevant)
    dcg = 0.0
    for pos, item in enumerate(ranked[:k]):
        if item in relevant:
            dcg += 1.0 / math.log2(pos + 2)
    best = 0.0
    for perm in itertools.permutations(ranked):
        cand = 0.0
        for pos, item in enumerate(perm[:k]):
            if item in relevant:
                cand += 1.0 / math.log2(pos + 2)
        best = max(best, cand)
    return recall, (dcg / best if best else 0.0)


class TestPointMetrics:
    def test_perfect_ranking(self):
        assert recall_at_k([7, 9], [7, 9], 2) == 1.0
        assert ndcg_at_k([7, 9], [7, 9], 2) == 1.0

    def test_single_relevant_second_place(self):
        # DCG = 1/log2(3), ideal = 1/log2(2) = 1
        assert recall_at_k([5, 3], [3], 2) == 1.0
        assert ndcg_at_k([5, 3], [3], 2) == pytest.approx(1.0 / math.log2(3), rel=1e-12)

    def test_miss(self):
        assert recall_at_k([1, 2], [9], 2) == 0.0
        assert ndcg_at_k([1, 2], [9], 2) == 0.0

    def test_empty_relevant_rejected(self):
        with pytest.raises(ValueError):
            recall_at_k([1], [], 1)

    def test_range_bounds(self, rng):
        for _ in range(100):
            universe = rng.permutation(8)
            relevant = universe[: rng.integers(1, 5)]
            k = int(rng.integers(1, 9))
            r = recall_at_k(universe, relevant, k)
            n = ndcg_at_k(universe, relevant, k)
            assert 0.0 <= r <= 1.0 and 0.0 <= n <= 1.0

    def test_matches_brute_force_on_small_universes(self, rng):
        # exhaustive: all rankings of universes up to 5 items
        for size in (2, 3, 4, 5):
            items = list(range(size))
            for relevant_size in range(1, size + 1):
                relevant = items[:relevant_size]
                for ranked in itertools.permutations(items):
                    for k in range(1, size + 1):
                        r_brute, n_brute = brute_force_metrics(list(ranked), relevant, k)
                        assert recall_at_k(ranked, relevant, k) == pytest.approx(r_brute, abs=1e-12)
                        assert ndcg_at_k(ranked, relevant, k) == pytest.approx(n_brute, abs=1e-12)

    def test_ndcg_one_iff_prefix_is_relevant(self):
        assert ndcg_at_k([4, 1, 2], [4, 1], 2) == 1.0
        assert ndcg_at_k([4, 2, 1], [4, 1], 2) < 1.0


def make_split(train, val, test):
    as_t = lambda rows: tuple(np.asarray(r, dtype=np.int64) for r in rows)
    return DatasetSplit(train=as_t(train), val=as_t(val), test=as_t(test),
                        seed=0, matrix_hash="h")


class TestEvaluate:
    def test_mean_over_nonempty_users(self):
        split = make_split([[0], [1], [2]], [[], [], []], [[1], [], [3]])
        lists = {0: [1, 2], 2: [0, 3]}
        m = evaluate(split, lambda u: lists[u], ks=(2,), stage="test")
        assert m.n_evaluated == 2
        assert m.recall[2] == pytest.approx((1.0 + 1.0) / 2)
        assert m.ndcg[2] == pytest.approx((1.0 + 1.0 / math.log2(3)) / 2)

    def test_protocol_violation_raises(self):
        split = make_split([[0]], [[1]], [[2]])
        with pytest.raises(ProtocolError):
            evaluate(split, lambda u: [0, 2], ks=(2,), stage="test")

    def test_val_stage_allows_val_items_excludes_train(self):
        split = make_split([[0]], [[1]], [[2]])
        m = evaluate(split, lambda u: [1], ks=(1,), stage="val")
        assert m.recall[1] == 1.0
        with pytest.raises(ProtocolError):
            evaluate(split, lambda u: [0], ks=(1,), stage="val")

    def test_no_testable_users(self):
        split = make_split([[0]], [[]], [[]])
        with pytest.raises(ValueError):
            evaluate(split, lambda u: [1], ks=(1,))

    def test_bad_stage(self):
        split = make_split([[0]], [[]], [[1]])
        with pytest.raises(ValueError):
            evaluate(split, lambda u: [1], ks=(1,), stage="future")


class TestPopularityBaseline:
    def test_hand_tally(self):
        # 6-item toy corpus: counts 3,2,2,1,0,1 over train rows
        split = make_split(
            train=[[0, 1, 2], [0, 1, 3], [0, 2, 5]],
            val=[[], [], []],
            test=[[], [], []],
        )
        scores = popularity_baseline(split, 6)
        assert scores.tolist() == [3.0, 2.0, 2.0, 1.0, 0.0, 1.0]

    def test_dominant_item_ranks_first(self):
        split = make_split([[0, 1], [1], [1, 2]], [[], [], []], [[], [], []])
        scores = popularity_baseline(split, 4)
        ranked = recommend_topk(scores, set(), 4)
        assert ranked[0] == 1

    def test_uniform_counts_tie_to_ascending(self):
        split = make_split([[0], [1], [2]], [[], [], []], [[], [], []])
        scores = popularity_baseline(split, 3)
        assert recommend_topk(scores, set(), 3).tolist() == [0, 1, 2]

    def test_empty_train_rejected(self):
        split = make_split([[]], [[]], [[]])
        with pytest.raises(ValueError):
            popularity_baseline(split, 3)

    def test_through_evaluation_pipeline(self):
        m = interactions_from_rows(
            [[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]] * 6, n_items=10)
        split = split_dataset(m, seed=0)
        scores = popularity_baseline(split, 10)
        mets = evaluate(
            split, lambda u: recommend_topk(scores, split.excluded(u, "test"), 10),
            ks=(10,), stage="test")
        assert 0.0 <= mets.recall[10] <= 1.0


class TestAggregation:
    def fake_metrics(self, r10):
        return evaluate(
            make_split([[0]], [[]], [[1]]),
            lambda u: [1] if r10 else [2],
            ks=(1,), stage="test")

    def test_mean_std(self):
        runs = [self.fake_metrics(True), self.fake_metrics(True), self.fake_metrics(False)]
        rows = aggregate_runs(runs)
        recall_row = next(r for r in rows if r["metric"] == "recall" and r["k"] == 1)
        assert recall_row["mean"] == pytest.approx(2 / 3)
        assert recall_row["std"] > 0
        assert "recall" in format_table(rows)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_runs([])
