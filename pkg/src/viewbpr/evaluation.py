"""Leave-one-out splitting, HR/NDCG, popularity baseline and skewness curves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import Behavior, FeedbackDataset, Interaction, ItemSets
from .model import rank_items


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class Splits:
    """Training data plus one validation and one test purchase per user."""

    train: FeedbackDataset
    validation: np.ndarray
    test: np.ndarray

    def excluded(self, u: int) -> np.ndarray:
        """Items hidden from the ranking of user ``u``: train purchases and validation item."""
        return np.append(self.train.purchased(u), self.validation[u])


def split_leave_one_out(dataset: FeedbackDataset, rng: np.random.Generator) -> Splits:
    """Hold out each user's latest purchase for test and a random one for validation.

    Ties on the latest timestamp go to the highest item index. Views stay in
    the training set.
    """
    test = np.empty(dataset.num_users, dtype=np.int64)
    validation = np.empty(dataset.num_users, dtype=np.int64)
    train_rows = []
    sizes = dataset.purchases.sizes()
    short = np.flatnonzero(sizes < 3)
    if len(short):
        raise SplitError(f"user {int(short[0])} has {int(sizes[short[0]])} purchases, need at least 3")
    picks = rng.integers(0, sizes - 1)
    for u in range(dataset.num_users):
        items, times = dataset.purchased(u), dataset.purchases.times(u)
        latest = np.flatnonzero(times == times.max())[-1]
        test[u] = items[latest]
        rest = np.delete(np.arange(len(items)), latest)
        val_pos = rest[picks[u]]
        validation[u] = items[val_pos]
        train_rows.append([(int(items[k]), int(times[k])) for k in rest if k != val_pos])
    train = FeedbackDataset(
        dataset.num_users,
        dataset.num_items,
        ItemSets.from_lists(train_rows),
        dataset.views,
        dataset.timestamps_day_granular,
    )
    return Splits(train, validation, test)


def hr_at_k(position: Optional[int], k: int) -> int:
    """1 if the held-out item sits at 1-based ``position`` <= k; ``None`` is a miss."""
    return int(position is not None and 1 <= position <= k)


def ndcg_at_k(position: Optional[int], k: int) -> float:
    if position is None or position > k:
        return 0.0
    return 1.0 / math.log2(position + 1)


def hit_positions(scorer, splits: Splits, k: int) -> List[Optional[int]]:
    """1-based rank of each user's test item in their top-``k`` list, or None."""
    out = []
    for u in range(splits.train.num_users):
        ranked = rank_items(scorer, u, splits.excluded(u), k)
        target = splits.test[u]
        out.append(next((p for p, (item, _) in enumerate(ranked, start=1) if item == target), None))
    return out


def evaluate(scorer, splits: Splits, k: int = 100) -> Tuple[float, float]:
    """Mean HR@k and NDCG@k over all users.

    ``scorer`` is anything with a ``scores(u)`` method returning one score per
    item, e.g. a FactorModel or a PopularityModel.
    """
    positions = hit_positions(scorer, splits, k)
    hr = sum(hr_at_k(p, k) for p in positions) / len(positions)
    ndcg = sum(ndcg_at_k(p, k) for p in positions) / len(positions)
    return hr, ndcg


class PopularityModel:
    """Scores every item by its training purchase count, identically for all users."""

    def __init__(self, counts: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.float64)

    def scores(self, u: int) -> np.ndarray:
        return self.counts


def popularity_baseline(train: FeedbackDataset) -> PopularityModel:
    return PopularityModel(np.bincount(train.purchases.indices, minlength=train.num_items))


DEFAULT_GRID = (0.001, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def item_counts(source: Union[FeedbackDataset, Sequence[Interaction]], behavior: Behavior) -> np.ndarray:
    if isinstance(source, FeedbackDataset):
        sets = source.purchases if behavior is Behavior.PURCHASE else source.views
        return np.bincount(sets.indices, minlength=source.num_items)
    counts: dict = {}
    for e in source:
        if e.behavior is behavior:
            counts[e.item] = counts.get(e.item, 0) + 1
    return np.asarray(list(counts.values()), dtype=np.int64)


def skewness_curve(
    source: Union[FeedbackDataset, Sequence[Interaction], np.ndarray],
    behavior: Behavior = Behavior.PURCHASE,
    grid: Optional[Sequence[float]] = None,
    breakpoint_limit: int = 1000,
) -> List[Tuple[float, float]]:
    """Cumulative interaction share carried by the top ``x`` fraction of items.

    Items are sorted by decreasing count and the curve is interpolated
    linearly between item boundaries ``k/N``. For ``N <= breakpoint_limit``
    every boundary is included in the returned points.
    """
    counts = source if isinstance(source, np.ndarray) else item_counts(source, behavior)
    counts = np.sort(np.asarray(counts, dtype=np.float64))[::-1]
    if counts.sum() == 0:
        raise ValueError(f"no {behavior.value} interactions")
    n = len(counts)
    xs_known = np.arange(n + 1) / n
    ys_known = np.concatenate([[0.0], np.cumsum(counts) / counts.sum()])
    xs = set(DEFAULT_GRID if grid is None else grid)
    if n <= breakpoint_limit:
        xs.update(xs_known[1:].tolist())
    xs = np.array(sorted(xs))
    ys = np.interp(xs, xs_known, ys_known)
    return [(float(x), float(y)) for x, y in zip(xs, ys)]
