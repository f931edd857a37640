"""MovieLens-shaped synthetic ratings for tests (the real corpus is not bundled).

Items get a Zipf-like popularity and a latent genre vector; users get a taste
vector and a heavy-tailed activity level. Each user picks items without
replacement with weight ``popularity * exp(affinity * <taste, genre>)``.
"""
from __future__ import annotations

import numpy as np

from fedcf.data import InteractionDataset, from_arrays


def synthetic_ratings(
    n_users: int,
    n_items: int,
    seed: int,
    latent_dim: int = 6,
    affinity: float = 2.0,
    pop_exponent: float = 0.8,
    min_per_user: int = 20,
    mean_per_user: float = 80.0,
):
    """Return ``(user_ids, item_ids, ratings, timestamps)`` arrays."""
    rng = np.random.default_rng(seed)
    popularity = 1.0 / np.arange(1, n_items + 1) ** pop_exponent
    popularity = popularity[rng.permutation(n_items)]
    genres = rng.standard_normal((n_items, latent_dim)) / np.sqrt(latent_dim)
    tastes = rng.standard_normal((n_users, latent_dim))
    activity = np.minimum(
        n_items // 2,
        min_per_user + rng.exponential(mean_per_user - min_per_user, size=n_users).astype(int),
    )

    users, items = [], []
    for u in range(n_users):
        w = popularity * np.exp(affinity * genres @ tastes[u])
        w /= w.sum()
        chosen = rng.choice(n_items, size=activity[u], replace=False, p=w)
        users.append(np.full(len(chosen), u))
        items.append(chosen)
    users = np.concatenate(users)
    items = np.concatenate(items)
    ratings = rng.integers(1, 11, size=len(users)) / 2.0
    timestamps = rng.integers(1_000_000_000, 1_400_000_000, size=len(users))
    return users + 1, items + 1, ratings, timestamps


def synthetic_dataset(n_users: int, n_items: int, seed: int, **kw) -> InteractionDataset:
    u, i, _, t = synthetic_ratings(n_users, n_items, seed, **kw)
    return from_arrays(u, i, t)


def write_ratings_csv(path, n_users: int, n_items: int, seed: int, **kw) -> None:
    u, i, r, t = synthetic_ratings(n_users, n_items, seed, **kw)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("userId,movieId,rating,timestamp\n")
        for row in zip(u, i, r, t):
            fh.write(f"{row[0]},{row[1]},{row[2]:.1f},{row[3]}\n")
