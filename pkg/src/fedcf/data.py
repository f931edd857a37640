"""MovieLens-style ingestion: parsing, binarization, filtering, subsets and splits.

Datasets are stored as coordinate arrays sorted by ``(user, item)`` with dense
indices; original MovieLens ids are kept in ``user_ids`` / ``item_ids``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd
import scipy.sparse as sp

logger = logging.getLogger(__name__)

HEADER = ("userId", "movieId", "rating", "timestamp")


class ParseError(ValueError):
    """Raised on malformed ratings input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DatasetError(ValueError):
    """Raised when a dataset operation cannot produce a valid result."""


@dataclass(frozen=True)
class RawRating:
    user_id: int
    item_id: int
    rating: float
    timestamp: int

    def __post_init__(self):
        if not self.rating > 0:
            raise ValueError(f"rating must be positive, got {self.rating}")
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be non-negative, got {self.timestamp}")


class SplitMode(str, enum.Enum):
    RANDOM = "random_leave_one_out"
    LATEST = "latest_leave_one_out"

    @classmethod
    def parse(cls, value: str | SplitMode) -> SplitMode:
        if isinstance(value, cls):
            return value
        aliases = {"random": cls.RANDOM, "latest": cls.LATEST}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ValueError(f"unknown split mode {value!r}") from None


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Sparse binary user x item matrix. Absent pairs mean ``r_ui = 0``."""

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return len(self.users)

    @property
    def density(self) -> float:
        return self.n_interactions / (self.n_users * self.n_items)

    @property
    def sparsity(self) -> float:
        return 1.0 - self.density

    @property
    def user_index_map(self) -> dict[int, int]:
        return {int(u): i for i, u in enumerate(self.user_ids)}

    @property
    def item_index_map(self) -> dict[int, int]:
        return {int(m): i for i, m in enumerate(self.item_ids)}

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """CSR matrix of ones, shape ``(n_users, n_items)``."""
        data = np.ones(self.n_interactions, dtype=np.float64)
        return sp.csr_matrix(
            (data, (self.users, self.items)), shape=(self.n_users, self.n_items)
        )

    @cached_property
    def _offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.user_counts())))

    @cached_property
    def _keys(self) -> np.ndarray:
        return self.users.astype(np.int64) * self.n_items + self.items

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def user_items(self, user: int) -> np.ndarray:
        """Sorted item indices user ``user`` interacted with."""
        lo, hi = self._offsets[user], self._offsets[user + 1]
        return self.items[lo:hi]

    def contains(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Vectorized ``r_ui == 1`` lookup."""
        keys = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        return self._keys[pos] == keys if len(self._keys) else np.zeros(keys.shape, bool)

    def summary(self) -> str:
        """Counts and sparsity as ``key=value`` lines."""
        return "\n".join(
            [
                f"n_users={self.n_users}",
                f"n_items={self.n_items}",
                f"n_interactions={self.n_interactions}",
                f"sparsity={self.sparsity:.6f}",
            ]
        )

    def restrict(self, mask: np.ndarray) -> InteractionDataset:
        """Keep the masked interactions; users and items are NOT re-densified."""
        return InteractionDataset(
            self.users[mask],
            self.items[mask],
            self.timestamps[mask],
            self.user_ids,
            self.item_ids,
        )


def parse_ratings(lines: Iterable[str]) -> list[RawRating]:
    """Parse MovieLens ``ratings.csv`` text lines (header first)."""
    it = iter(lines)
    try:
        header = next(it)
    except StopIteration:
        raise ParseError("empty ratings stream") from None
    cols = tuple(c.strip() for c in header.strip().lstrip("﻿").split(","))
    if cols != HEADER:
        raise ParseError(f"expected header {','.join(HEADER)}, got {header.strip()!r}", 1)

    out = []
    for lineno, line in enumerate(it, start=2):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, got {len(fields)}", lineno)
        try:
            rating = RawRating(int(fields[0]), int(fields[1]), float(fields[2]), int(fields[3]))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        out.append(rating)
    if not out:
        raise ParseError("no data lines")
    return out


def from_arrays(user_ids, item_ids, timestamps) -> InteractionDataset:
    """Build a dataset from raw id arrays; duplicates collapse to the latest timestamp."""
    user_ids = np.asarray(user_ids, dtype=np.int64)
    item_ids = np.asarray(item_ids, dtype=np.int64)
    timestamps = np.asarray(timestamps, dtype=np.int64)
    if len(user_ids) == 0:
        raise DatasetError("no ratings")
    uniq_users, users = np.unique(user_ids, return_inverse=True)
    uniq_items, items = np.unique(item_ids, return_inverse=True)

    # sort by (user, item, timestamp) so the last row of each pair is the latest
    order = np.lexsort((timestamps, items, users))
    users, items, timestamps = users[order], items[order], timestamps[order]
    last = np.ones(len(users), dtype=bool)
    last[:-1] = (users[1:] != users[:-1]) | (items[1:] != items[:-1])
    return InteractionDataset(
        users[last].astype(np.int64),
        items[last].astype(np.int64),
        timestamps[last],
        uniq_users,
        uniq_items,
    )


def binarize(ratings: list[RawRating]) -> InteractionDataset:
    """Every observed rating (all are > 0) becomes ``r_ui = 1``."""
    if not ratings:
        raise DatasetError("no ratings")
    return from_arrays(
        [r.user_id for r in ratings],
        [r.item_id for r in ratings],
        [r.timestamp for r in ratings],
    )


def load_ratings(path: str | Path) -> InteractionDataset:
    """Fast path for large files: parse + binarize via pandas."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
    if not header:
        raise ParseError("empty ratings stream")
    cols = tuple(c.strip() for c in header.strip().lstrip("﻿").split(","))
    if cols != HEADER:
        raise ParseError(f"expected header {','.join(HEADER)}, got {header.strip()!r}", 1)
    try:
        df = pd.read_csv(
            path,
            dtype={"userId": np.int64, "movieId": np.int64, "rating": np.float64, "timestamp": np.int64},
            engine="c",
        )
    except (ValueError, pd.errors.ParserError) as exc:
        raise ParseError(str(exc)) from None
    if df.empty:
        raise ParseError("no data lines")
    bad = ~(df["rating"] > 0) | (df["timestamp"] < 0)
    if bad.any():
        first = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError("rating must be positive and timestamp non-negative", first + 2)
    logger.info("read %d ratings from %s", len(df), path)
    return from_arrays(df["userId"].to_numpy(), df["movieId"].to_numpy(), df["timestamp"].to_numpy())


def _densify(ds: InteractionDataset, mask: np.ndarray) -> InteractionDataset:
    users, items = ds.users[mask], ds.items[mask]
    keep_u = np.unique(users)
    keep_i = np.unique(items)
    return InteractionDataset(
        np.searchsorted(keep_u, users),
        np.searchsorted(keep_i, items),
        ds.timestamps[mask],
        ds.user_ids[keep_u],
        ds.item_ids[keep_i],
    )


def filter_min_interactions(ds: InteractionDataset, threshold: int) -> InteractionDataset:
    """Alternate user and item passes until both have >= ``threshold`` interactions."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    mask = np.ones(ds.n_interactions, dtype=bool)
    rounds = 0
    while True:
        rounds += 1
        ucount = np.bincount(ds.users[mask], minlength=ds.n_users)
        mask &= ucount[ds.users] >= threshold
        icount = np.bincount(ds.items[mask], minlength=ds.n_items)
        mask &= icount[ds.items] >= threshold
        ucount = np.bincount(ds.users[mask], minlength=ds.n_users)
        if np.all(ucount[ds.users[mask]] >= threshold):
            break
    if not mask.any():
        raise DatasetError("dataset vanished under filter")
    logger.debug("filter reached fixpoint after %d rounds", rounds)
    return _densify(ds, mask)


def sample_subset(
    ds: InteractionDataset,
    n_users: int,
    n_items: int,
    seed: int,
    min_user_interactions: int = 1,
) -> InteractionDataset:
    """Uniformly sample ``n_items`` items, then ``n_users`` users among those
    with at least ``min_user_interactions`` interactions on the sampled items.

    Items left without any interaction after the user draw are dropped.
    """
    if n_users > ds.n_users or n_items > ds.n_items:
        raise DatasetError(
            f"requested {n_users}x{n_items} from a {ds.n_users}x{ds.n_items} dataset"
        )
    rng = np.random.default_rng(seed)
    items = np.sort(rng.choice(ds.n_items, size=n_items, replace=False))
    item_mask = np.zeros(ds.n_items, dtype=bool)
    item_mask[items] = True
    mask = item_mask[ds.items]

    counts = np.bincount(ds.users[mask], minlength=ds.n_users)
    qualifying = np.flatnonzero(counts >= min_user_interactions)
    if len(qualifying) < n_users:
        raise DatasetError(
            f"only {len(qualifying)} users qualify after item restriction, need {n_users}"
        )
    users = np.sort(rng.choice(qualifying, size=n_users, replace=False))
    user_mask = np.zeros(ds.n_users, dtype=bool)
    user_mask[users] = True
    mask &= user_mask[ds.users]

    out = _densify(ds, mask)
    if out.n_items < n_items:
        logger.info("dropped %d sampled items with no interactions", n_items - out.n_items)
    return out


@dataclass(frozen=True, eq=False)
class SplitPair:
    full: InteractionDataset
    train: InteractionDataset
    test_items: np.ndarray
    split_mode: SplitMode
    seed: int

    @property
    def test_item_per_user(self) -> dict[int, int]:
        return {u: int(i) for u, i in enumerate(self.test_items)}


def split_leave_one_out(ds: InteractionDataset, mode: SplitMode | str, seed: int) -> SplitPair:
    """Hold out exactly one interaction per user."""
    mode = SplitMode.parse(mode)
    counts = ds.user_counts()
    short = np.flatnonzero(counts < 2)
    if len(short):
        u = int(short[0])
        raise DatasetError(
            f"user {int(ds.user_ids[u])} (index {u}) has {counts[u]} interaction(s); need >= 2"
        )
    offsets = ds._offsets
    if mode is SplitMode.RANDOM:
        rng = np.random.default_rng(seed)
        held = offsets[:-1] + rng.integers(0, counts)
    else:
        # per user: max timestamp, ties broken by larger item index
        order = np.lexsort((ds.items, ds.timestamps, ds.users))
        held = order[offsets[1:] - 1]
    mask = np.ones(ds.n_interactions, dtype=bool)
    mask[held] = False
    return SplitPair(ds, ds.restrict(mask), ds.items[held].copy(), mode, seed)


def sample_negatives(
    ds: InteractionDataset,
    user: int,
    n: int,
    seed: int,
    exclude: Iterable[int] = (),
) -> np.ndarray:
    """``n`` distinct items the user never interacted with, none in ``exclude``."""
    allowed = np.ones(ds.n_items, dtype=bool)
    allowed[ds.user_items(user)] = False
    exclude = np.fromiter(exclude, dtype=np.int64)
    allowed[exclude] = False
    candidates = np.flatnonzero(allowed)
    if len(candidates) < n:
        raise DatasetError(
            f"user {user} has {len(candidates)} candidate negatives, need {n}"
        )
    rng = np.random.default_rng((seed, user))
    return rng.choice(candidates, size=n, replace=False)
