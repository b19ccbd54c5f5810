"""Shared domain types for the view-aware BPR toolkit.

Per-user item sets are stored in CSR layout (``indptr`` + sorted ``indices``)
so membership tests are a binary search and iteration order is deterministic.
The unobserved set of a user is never materialized.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


class Behavior(enum.Enum):
    PURCHASE = "purchase"
    VIEW = "view"


@dataclass(frozen=True)
class Interaction:
    """One raw (user, item, behavior, timestamp) event."""

    user: str
    item: str
    behavior: Behavior
    timestamp: int

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if not isinstance(self.behavior, Behavior):
            raise TypeError(f"behavior must be a Behavior, got {self.behavior!r}")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ItemSets:
    """Per-user sorted item lists in CSR form, with aligned timestamps."""

    indptr: np.ndarray
    indices: np.ndarray
    timestamps: np.ndarray

    @classmethod
    def from_lists(cls, per_user: List[List[Tuple[int, int]]]) -> "ItemSets":
        """Build from ``per_user[u] = [(item, ts), ...]``; items are sorted."""
        indptr = np.zeros(len(per_user) + 1, dtype=np.int64)
        items, stamps = [], []
        for u, pairs in enumerate(per_user):
            pairs = sorted(pairs)
            indptr[u + 1] = indptr[u] + len(pairs)
            items.extend(p[0] for p in pairs)
            stamps.extend(p[1] for p in pairs)
        return cls(
            _freeze(indptr),
            _freeze(np.asarray(items, dtype=np.int64)),
            _freeze(np.asarray(stamps, dtype=np.int64)),
        )

    @property
    def num_users(self) -> int:
        return len(self.indptr) - 1

    def items(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def times(self, u: int) -> np.ndarray:
        return self.timestamps[self.indptr[u]:self.indptr[u + 1]]

    def sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    def contains(self, u: int, i: int) -> bool:
        row = self.items(u)
        k = np.searchsorted(row, i)
        return bool(k < len(row) and row[k] == i)

    def keys(self, num_items: int) -> np.ndarray:
        """Sorted ``u * num_items + i`` keys for vectorized membership tests."""
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), self.sizes())
        return users * num_items + self.indices

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class FeedbackDataset:
    """Dense-indexed purchase set S_u and view set V_u for every user."""

    num_users: int
    num_items: int
    purchases: ItemSets
    views: ItemSets
    timestamps_day_granular: bool = False
    _purchase_keys: np.ndarray = field(init=False, repr=False, compare=False)
    _observed_keys: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pk = _freeze(self.purchases.keys(self.num_items))
        vk = self.views.keys(self.num_items)
        object.__setattr__(self, "_purchase_keys", pk)
        object.__setattr__(self, "_observed_keys", _freeze(np.union1d(pk, vk)))

    @classmethod
    def from_sets(
        cls,
        num_users: int,
        num_items: int,
        purchases: List[List[int]],
        views: Optional[List[List[int]]] = None,
        *,
        purchase_times: Optional[List[List[int]]] = None,
        view_times: Optional[List[List[int]]] = None,
        day_granular: bool = False,
    ) -> "FeedbackDataset":
        """Convenience constructor from plain per-user item lists.

        Missing timestamps default to zero.
        """
        if views is None:
            views = [[] for _ in range(num_users)]

        def pairs(sets, times):
            out = []
            for u, items in enumerate(sets):
                ts = times[u] if times is not None else [0] * len(items)
                out.append(list(zip(items, ts)))
            return out

        return cls(
            num_users,
            num_items,
            ItemSets.from_lists(pairs(purchases, purchase_times)),
            ItemSets.from_lists(pairs(views, view_times)),
            day_granular,
        )

    def purchased(self, u: int) -> np.ndarray:
        return self.purchases.items(u)

    def viewed(self, u: int) -> np.ndarray:
        return self.views.items(u)

    def is_purchased(self, u: int, i: int) -> bool:
        return self.purchases.contains(u, i)

    def is_viewed(self, u: int, i: int) -> bool:
        return self.views.contains(u, i)

    def purchased_mask(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return _isin_sorted(self._purchase_keys, users * self.num_items + items)

    def observed_mask(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """True where (u, i) is purchased or viewed."""
        return _isin_sorted(self._observed_keys, users * self.num_items + items)

    @property
    def num_purchases(self) -> int:
        return len(self.purchases)

    @property
    def num_views(self) -> int:
        return len(self.views)

    def summary(self) -> dict:
        cells = self.num_users * self.num_items
        return {
            "purchases": self.num_purchases,
            "views": self.num_views,
            "users": self.num_users,
            "items": self.num_items,
            "purchase_sparsity": 1.0 - self.num_purchases / cells if cells else 1.0,
            "view_sparsity": 1.0 - self.num_views / cells if cells else 1.0,
        }


def _isin_sorted(sorted_keys: np.ndarray, keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    if len(sorted_keys) == 0:
        return np.zeros(keys.shape, dtype=bool)
    pos = np.searchsorted(sorted_keys, keys)
    pos = np.minimum(pos, len(sorted_keys) - 1)
    return sorted_keys[pos] == keys


def validate_dataset(d: FeedbackDataset) -> List[str]:
    """Return one description per violated dataset invariant (empty if valid)."""
    problems = []
    for name, sets in (("purchases", d.purchases), ("views", d.views)):
        if sets.num_users != d.num_users:
            problems.append(f"{name}: has {sets.num_users} user rows, expected {d.num_users}")
            return problems
        bad = np.flatnonzero((sets.indices < 0) | (sets.indices >= d.num_items))
        for k in bad:
            u = int(np.searchsorted(sets.indptr, k, side="right") - 1)
            problems.append(f"{name}: user {u} has out-of-range item {int(sets.indices[k])}")
        if np.any(sets.timestamps < 0):
            problems.append(f"{name}: negative timestamps present")
    for u in range(d.num_users):
        s, v = d.purchased(u), d.viewed(u)
        if len(s) == 0:
            problems.append(f"user {u} has no purchases")
        if len(s) > 1 and np.any(np.diff(s) <= 0):
            problems.append(f"user {u} has unsorted or duplicate purchases")
        if len(v) > 1 and np.any(np.diff(v) <= 0):
            problems.append(f"user {u} has unsorted or duplicate views")
        for i in np.intersect1d(s, v):
            problems.append(f"user {u} both purchased and viewed item {int(i)}")
    return problems


@dataclass
class FactorModel:
    """User factors ``P`` (M x K) and item factors ``Q`` (N x K)."""

    P: np.ndarray
    Q: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.P.ndim != 2 or self.Q.ndim != 2 or self.P.shape[1] != self.Q.shape[1]:
            raise ValueError(f"incompatible factor shapes {self.P.shape} and {self.Q.shape}")

    @property
    def num_users(self) -> int:
        return self.P.shape[0]

    @property
    def num_items(self) -> int:
        return self.Q.shape[0]

    @property
    def K(self) -> int:
        return self.P.shape[1]

    def scores(self, u: int) -> np.ndarray:
        return self.Q @ self.P[u]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.P).all() and np.isfinite(self.Q).all())

    def copy(self) -> "FactorModel":
        return FactorModel(self.P.copy(), self.Q.copy(), self.seed)


class SamplerKind(enum.Enum):
    UNIFORM = "uniform"
    REDUCED = "reduced"
    DNS = "dns"
    BIASED = "biased"
    TRIPLE = "triple"


@dataclass(frozen=True)
class SamplerConfig:
    kind: SamplerKind = SamplerKind.UNIFORM
    gamma: float = 1.0
    omega: Tuple[float, float, float] = (0.3, 0.3, 0.4)
    dns_candidates: int = 10
    # Uniform/reduced/dns only: also keep viewed items out of the negative pool.
    exclude_views: bool = False
    # Triple only: users without views take a plain (i, j) step instead of being skipped.
    pair_fallback: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if len(self.omega) != 3 or any(w < 0 for w in self.omega):
            raise ValueError(f"omega must be three non-negative weights, got {self.omega}")
        if abs(sum(self.omega) - 1.0) > 1e-9:
            raise ValueError(f"omega must sum to 1, got {sum(self.omega)}")
        if self.dns_candidates < 1:
            raise ValueError("dns_candidates must be >= 1")


class WeightingMode(enum.Enum):
    GLOBAL = "global"
    PER_USER = "per-user"


@dataclass(frozen=True)
class WeightingConfig:
    mode: WeightingMode = WeightingMode.GLOBAL
    alpha: float = 0.7
    beta: float = 0.5
    session_gap: int = 3600

    def __post_init__(self):
        if self.mode is WeightingMode.GLOBAL and not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.mode is WeightingMode.PER_USER:
            if not self.beta > 0:
                raise ValueError(f"beta must be positive, got {self.beta}")
            if not self.session_gap > 0:
                raise ValueError(f"session_gap must be positive, got {self.session_gap}")


class LearningRateMode(enum.Enum):
    FIXED = "fixed"
    ADAGRAD = "adagrad"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    lr_mode: LearningRateMode = LearningRateMode.FIXED
    regularization: float = 0.01
    factors: int = 32
    max_epochs: int = 50
    patience: int = 0
    seed: int = 0
    steps_per_epoch: Optional[int] = None  # None: number of training purchases
    init_scale: float = 0.01
    eval_k: int = 100
    eval_every_epoch: bool = True

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.regularization < 0:
            raise ValueError(f"regularization must be >= 0, got {self.regularization}")
        if self.factors < 1:
            raise ValueError(f"factors must be >= 1, got {self.factors}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
