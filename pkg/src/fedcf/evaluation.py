"""Leave-one-out HR@K: the held-out item is ranked against 99 sampled negatives."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import SplitPair, sample_negatives

DEFAULT_KS = (2, 5, 10)
N_NEGATIVES = 99


@dataclass(frozen=True)
class RankingTask:
    user: int
    test_item: int
    negatives: tuple[int, ...]

    def __post_init__(self):
        if self.test_item in self.negatives:
            raise ValueError("test item must not be among the negatives")


@dataclass(frozen=True)
class Metrics:
    hr: dict[int, float]
    n_users: int
    extra: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        values = [self.hr[k] for k in sorted(self.hr)]
        if any(not 0 <= v <= 1 for v in values):
            raise ValueError(f"hit ratios outside [0, 1]: {self.hr}")
        if any(a > b for a, b in zip(values, values[1:])):
            raise ValueError(f"hit ratios not monotone in K: {self.hr}")


class TaskSet:
    """Array form of a list of ranking tasks: ``candidates[:, 0]`` is the test item."""

    def __init__(self, users: np.ndarray, candidates: np.ndarray):
        self.users = np.asarray(users, dtype=np.int64)
        self.candidates = np.asarray(candidates, dtype=np.int64)

    @classmethod
    def from_tasks(cls, tasks: Sequence[RankingTask]) -> TaskSet:
        if not tasks:
            raise ValueError("empty task list")
        users = np.array([t.user for t in tasks])
        cands = np.array([(t.test_item, *t.negatives) for t in tasks])
        return cls(users, cands)

    def __len__(self) -> int:
        return len(self.users)

    def tasks(self) -> list[RankingTask]:
        return [
            RankingTask(int(u), int(c[0]), tuple(int(j) for j in c[1:]))
            for u, c in zip(self.users, self.candidates)
        ]


def build_tasks(split: SplitPair, seed: int, n_negatives: int = N_NEGATIVES) -> TaskSet:
    """One task per user; negatives avoid the user's full (train + test) history."""
    full = split.full
    users = np.arange(full.n_users)
    cands = np.empty((full.n_users, n_negatives + 1), dtype=np.int64)
    cands[:, 0] = split.test_items
    for u in users:
        cands[u, 1:] = sample_negatives(full, int(u), n_negatives, seed)
    return TaskSet(users, cands)


def _ranks(scores: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Rank of column 0 per row; ties go to the smaller item index."""
    s0 = scores[:, :1]
    better = (scores > s0) | ((scores == s0) & (items < items[:, :1]))
    return 1 + better.sum(axis=1)


def rank_test_item(x_u: np.ndarray, V: np.ndarray, task: RankingTask) -> int:
    items = np.array([(task.test_item, *task.negatives)])
    return int(_ranks((V[items[0]] @ x_u)[None, :], items)[0])


def rank_all(X: np.ndarray, V: np.ndarray, tasks: TaskSet) -> np.ndarray:
    scores = np.einsum("uf,ucf->uc", X[tasks.users], V[tasks.candidates])
    return _ranks(scores, tasks.candidates)


def hit_ratio(tasks: TaskSet | Sequence[RankingTask], X: np.ndarray, V: np.ndarray, Ks: Sequence[int] = DEFAULT_KS) -> Metrics:
    if not isinstance(tasks, TaskSet):
        tasks = TaskSet.from_tasks(tasks)
    if len(tasks) == 0:
        raise ValueError("empty task list")
    if list(Ks) != sorted(Ks):
        raise ValueError("Ks must be sorted ascending")
    ranks = rank_all(X, V, tasks)
    return Metrics({int(K): float(np.mean(ranks <= K)) for K in Ks}, len(tasks))


def random_baseline(Ks: Sequence[int] = DEFAULT_KS, n_candidates: int = N_NEGATIVES + 1) -> Metrics:
    """Expected HR@K under a uniformly random ranking."""
    return Metrics({int(K): K / n_candidates for K in Ks}, 0)
