"""Synthetic logs with a planted preference order: purchased > viewed > rest."""

from __future__ import annotations

from typing import List

import numpy as np

from .core import Behavior, FeedbackDataset, Interaction, ItemSets


def planted_dataset(
    num_users: int = 300,
    num_items: int = 500,
    true_factors: int = 8,
    purchases_per_user: int = 15,
    views_per_user: int = 30,
    swap_prob: float = 0.2,
    seed: int = 0,
) -> FeedbackDataset:
    """Sample ground-truth factors and rank every item for every user.

    Each user purchases their top ``purchases_per_user`` items and views the
    next ``views_per_user``; each purchase is swapped with a random view of the
    same user with probability ``swap_prob``. Timestamps are random seconds so
    the held-out latest purchase is a random purchase.
    """
    rng = np.random.default_rng(seed)
    users = rng.normal(size=(num_users, true_factors))
    items = rng.normal(size=(num_items, true_factors))
    order = np.argsort(-(users @ items.T), axis=1, kind="stable")
    bought_rows, viewed_rows = [], []
    for u in range(num_users):
        bought = order[u, :purchases_per_user].copy()
        viewed = order[u, purchases_per_user:purchases_per_user + views_per_user].copy()
        for k in np.flatnonzero(rng.random(purchases_per_user) < swap_prob):
            t = rng.integers(views_per_user)
            bought[k], viewed[t] = viewed[t], bought[k]
        times = rng.choice(10**6, size=purchases_per_user + views_per_user, replace=False)
        bought_rows.append(list(zip(bought.tolist(), times[:purchases_per_user].tolist())))
        viewed_rows.append(list(zip(viewed.tolist(), times[purchases_per_user:].tolist())))
    return FeedbackDataset(num_users, num_items, ItemSets.from_lists(bought_rows), ItemSets.from_lists(viewed_rows))


def skewed_purchase_log(num_items: int = 1000, top_fraction: float = 0.01, top_share: float = 0.5, total: int = 20000) -> List[Interaction]:
    """Purchase events where the top ``top_fraction`` of items carry ``top_share`` of purchases."""
    n_top = max(1, int(round(top_fraction * num_items)))
    top_total = int(round(top_share * total))
    counts = np.empty(num_items, dtype=np.int64)
    counts[:n_top] = top_total // n_top
    counts[:top_total % n_top] += 1
    rest = total - top_total
    n_rest = num_items - n_top
    counts[n_top:] = rest // n_rest
    counts[n_top:n_top + rest % n_rest] += 1
    events = []
    for item, c in enumerate(counts):
        events += [Interaction(f"u{k}", f"i{item}", Behavior.PURCHASE, k) for k in range(int(c))]
    return events
