import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcf.config import ExperimentConfig
from fedcf.data import split_leave_one_out
from fedcf.evaluation import (
    Metrics,
    RankingTask,
    TaskSet,
    build_tasks,
    hit_ratio,
    random_baseline,
    rank_all,
    rank_test_item,
)
from fedcf.experiment import cross_validate
from synthetic import synthetic_dataset


def brute_rank(x, V, task):
    """Sort by (-score, item) and find the test item's 1-based position."""
    cands = [task.test_item, *task.negatives]
    order = sorted(cands, key=lambda j: (-float(V[j] @ x), j))
    return order.index(task.test_item) + 1


class TestRank:
    def test_best(self):
        V = np.array([[3.0], [1.0], [2.0]])
        assert rank_test_item(np.array([1.0]), V, RankingTask(0, 0, (1, 2))) == 1

    def test_worst(self):
        V = np.array([[0.0], [1.0], [2.0]])
        assert rank_test_item(np.array([1.0]), V, RankingTask(0, 0, (1, 2))) == 3

    def test_tie_goes_to_smaller_index(self):
        V = np.ones((4, 1))
        assert rank_test_item(np.array([1.0]), V, RankingTask(0, 2, (0, 3))) == 2

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        V = rng.integers(-2, 3, (30, 2)).astype(float)  # integer scores force ties
        X = rng.integers(-2, 3, (5, 2)).astype(float)
        tasks = []
        for u in range(5):
            perm = rng.permutation(30)[:10]
            tasks.append(RankingTask(u, int(perm[0]), tuple(int(j) for j in perm[1:])))
        ranks = rank_all(X, V, TaskSet.from_tasks(tasks))
        assert ranks.tolist() == [brute_rank(X[t.user], V, t) for t in tasks]

    def test_test_item_in_negatives(self):
        with pytest.raises(ValueError):
            RankingTask(0, 1, (1, 2))


class TestHitRatio:
    def test_hand(self):
        V = np.arange(10, dtype=float)[:, None]
        X = np.array([[1.0], [-1.0]])
        tasks = [RankingTask(0, 9, tuple(range(9))), RankingTask(1, 9, tuple(range(9)))]
        m = hit_ratio(tasks, X, V, (1, 5, 10))
        assert m.hr == {1: 0.5, 5: 0.5, 10: 1.0}

    def test_empty(self):
        with pytest.raises(ValueError):
            hit_ratio([], np.zeros((1, 1)), np.zeros((1, 1)))

    def test_metrics_validation(self):
        with pytest.raises(ValueError):
            Metrics({2: 0.5, 5: 0.4}, 1)
        with pytest.raises(ValueError):
            Metrics({2: 1.5}, 1)

    def test_random_baseline(self):
        assert random_baseline().hr == {2: 0.02, 5: 0.05, 10: 0.1}

    def test_build_tasks(self):
        ds = synthetic_dataset(40, 300, 1)
        split = split_leave_one_out(ds, "random", 0)
        ts = build_tasks(split, 0)
        assert ts.candidates.shape == (40, 100)
        np.testing.assert_array_equal(ts.candidates[:, 0], split.test_items)
        for u in range(40):
            negs = ts.candidates[u, 1:]
            assert len(set(negs.tolist())) == 99
            assert not ds.contains(np.full(99, u), negs).any()


class TestCrossValidate:
    def test_single_split_std_zero(self):
        ds = synthetic_dataset(50, 200, 2)
        cfg = ExperimentConfig(epochs=2, k=5, n_splits=1)
        res = cross_validate(ds, cfg, 1, 0)
        assert res.std == {2: 0.0, 5: 0.0, 10: 0.0}
        assert res.mean.hr == res.per_split[0].hr

    def test_three_splits_mean_std(self):
        ds = synthetic_dataset(50, 200, 2)
        cfg = ExperimentConfig(epochs=1, k=5, mode="random")
        res = cross_validate(ds, cfg, 3, 0)
        vals = [m.hr[10] for m in res.per_split]
        assert res.mean.hr[10] == pytest.approx(sum(vals) / 3)
        m = sum(vals) / 3
        assert res.std[10] == pytest.approx((sum((v - m) ** 2 for v in vals) / 2) ** 0.5)

    def test_zero_splits(self):
        with pytest.raises(ValueError):
            cross_validate(synthetic_dataset(20, 200, 0), ExperimentConfig(), 0, 0)
