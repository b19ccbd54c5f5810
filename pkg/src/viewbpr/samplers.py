"""Training-example samplers.

Every sampler has a batched ``draw_*`` form used by the training loop and a
single-example ``sample_*`` form; the single form is the batched one with
``n=1``, so both consume the generator identically.

Negative pools: uniform, reduced-space and DNS samplers exclude only the
user's purchases unless ``exclude_views`` is set; the view-aware samplers
always draw unobserved items from outside S_u and V_u.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .core import FactorModel, FeedbackDataset

MAX_REJECTIONS = 100


class InfeasibleRatioError(ValueError):
    pass


class PairKind(enum.IntEnum):
    PURCHASED_VS_VIEWED = 0
    PURCHASED_VS_UNOBSERVED = 1
    VIEWED_VS_UNOBSERVED = 2


@dataclass(frozen=True)
class PairExample:
    u: int
    pos: int
    neg: int
    pair_kind: PairKind


@dataclass(frozen=True)
class QuadExample:
    u: int
    i: int
    v: int
    j: int


def _excluded_items(dataset: FeedbackDataset, u: int, exclude_views: bool) -> np.ndarray:
    if exclude_views:
        return np.union1d(dataset.purchased(u), dataset.viewed(u))
    return dataset.purchased(u)


def _complement_at(excluded: np.ndarray, ranks: np.ndarray) -> np.ndarray:
    """Map ranks within the sorted complement of ``excluded`` to item indices."""
    shifted = excluded - np.arange(len(excluded))
    return ranks + np.searchsorted(shifted, ranks, side="right")


def _draw_from_complement(dataset, u, exclude_views, size, rng, replace=True) -> np.ndarray:
    excluded = _excluded_items(dataset, u, exclude_views)
    pool = dataset.num_items - len(excluded)
    if pool <= 0:
        raise ValueError(f"user {u} has no unobserved items to sample")
    if replace:
        ranks = rng.integers(0, pool, size=size)
    else:
        ranks = rng.choice(pool, size=size, replace=False)
    return _complement_at(excluded, np.asarray(ranks, dtype=np.int64))


def draw_negatives(dataset: FeedbackDataset, users: np.ndarray, rng: np.random.Generator, exclude_views: bool = False) -> np.ndarray:
    """One uniform negative per entry of ``users`` by rejection sampling.

    After MAX_REJECTIONS rounds the stragglers are drawn by enumerating the
    complement, which only matters for nearly saturated users.
    """
    reject = dataset.observed_mask if exclude_views else dataset.purchased_mask
    users = np.asarray(users, dtype=np.int64)
    j = rng.integers(0, dataset.num_items, size=len(users))
    bad = np.flatnonzero(reject(users, j))
    for _ in range(MAX_REJECTIONS):
        if len(bad) == 0:
            break
        j[bad] = rng.integers(0, dataset.num_items, size=len(bad))
        bad = bad[reject(users[bad], j[bad])]
    for k in bad:
        j[k] = _draw_from_complement(dataset, int(users[k]), exclude_views, 1, rng)[0]
    return j


def _pick(sets, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One uniform member of ``sets`` for each user (every row must be non-empty)."""
    offsets = rng.integers(0, sets.sizes()[users])
    return sets.indices[sets.indptr[users] + offsets]


def _draw_users(dataset: FeedbackDataset, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, dataset.num_users, size=n)


def draw_uniform_triples(dataset, n, rng, exclude_views=False):
    """``n`` vanilla BPR triples as arrays ``(u, i, j)``."""
    u = _draw_users(dataset, n, rng)
    i = _pick(dataset.purchases, u, rng)
    j = draw_negatives(dataset, u, rng, exclude_views)
    return u, i, j


def sample_uniform_triple(dataset: FeedbackDataset, rng: np.random.Generator, exclude_views: bool = False) -> Tuple[int, int, int]:
    u, i, j = draw_uniform_triples(dataset, 1, rng, exclude_views)
    return int(u[0]), int(i[0]), int(j[0])


@dataclass(frozen=True)
class ReducedSpaces:
    """Fixed per-user negative candidate lists, CSR layout."""

    indptr: np.ndarray
    items: np.ndarray
    gamma: float

    def space(self, u: int) -> np.ndarray:
        return self.items[self.indptr[u]:self.indptr[u + 1]]

    def sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def indices(self) -> np.ndarray:
        return self.items


def reduced_space_size(num_items: int, gamma: float) -> int:
    return max(1, int(np.floor(gamma * num_items)))


def build_reduced_spaces(dataset: FeedbackDataset, gamma: float, rng: np.random.Generator, exclude_views: bool = False) -> ReducedSpaces:
    """Draw each user's fixed negative space without replacement.

    With ``gamma == 1`` a user's space is the whole negative pool; otherwise
    it holds ``max(1, floor(gamma * N))`` distinct items.
    """
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    indptr = np.zeros(dataset.num_users + 1, dtype=np.int64)
    chunks = []
    for u in range(dataset.num_users):
        excluded = _excluded_items(dataset, u, exclude_views)
        pool = dataset.num_items - len(excluded)
        if gamma == 1:
            size = pool
        else:
            size = reduced_space_size(dataset.num_items, gamma)
            if size > pool:
                raise InfeasibleRatioError(
                    f"user {u}: reduced space of {size} items exceeds the {pool} available negatives"
                )
        ranks = rng.choice(pool, size=size, replace=False) if size < pool else np.arange(pool)
        chunks.append(np.sort(_complement_at(excluded, np.asarray(ranks, dtype=np.int64))))
        indptr[u + 1] = indptr[u] + size
    items = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    indptr.setflags(write=False)
    items.setflags(write=False)
    return ReducedSpaces(indptr, items, gamma)


def draw_reduced_triples(dataset, spaces: ReducedSpaces, n, rng):
    u = _draw_users(dataset, n, rng)
    i = _pick(dataset.purchases, u, rng)
    j = _pick(spaces, u, rng)
    return u, i, j


def sample_reduced_triple(dataset: FeedbackDataset, spaces: ReducedSpaces, rng: np.random.Generator) -> Tuple[int, int, int]:
    u, i, j = draw_reduced_triples(dataset, spaces, 1, rng)
    return int(u[0]), int(i[0]), int(j[0])


def draw_dns_candidates(dataset, n, num_candidates, rng, exclude_views=False):
    """``(u, i, candidates)`` with ``num_candidates`` uniform negatives per row.

    The hardest candidate is chosen later against the current model.
    """
    u = _draw_users(dataset, n, rng)
    i = _pick(dataset.purchases, u, rng)
    cands = draw_negatives(dataset, np.repeat(u, num_candidates), rng, exclude_views)
    return u, i, cands.reshape(n, num_candidates)


def hardest_negative(model: FactorModel, u: int, candidates: Sequence[int]) -> int:
    """Highest-scoring candidate for ``u``; ties go to the lowest item index."""
    candidates = np.asarray(candidates)
    scores = model.Q[candidates] @ model.P[u]
    best = scores == scores.max()
    return int(candidates[best].min())


def sample_dns_triple(dataset: FeedbackDataset, model: FactorModel, num_candidates: int, rng: np.random.Generator, exclude_views: bool = False) -> Tuple[int, int, int]:
    if num_candidates < 1:
        raise ValueError("num_candidates must be >= 1")
    u, i, cands = draw_dns_candidates(dataset, 1, num_candidates, rng, exclude_views)
    return int(u[0]), int(i[0]), hardest_negative(model, int(u[0]), cands[0])


def kind_probabilities(dataset: FeedbackDataset, omega: Sequence[float]) -> np.ndarray:
    """Per-user pair-kind probabilities, renormalized over feasible kinds.

    Users without views can only produce (purchased, unobserved) pairs. When
    every feasible kind has zero weight that pair kind is used outright.
    """
    has_views = dataset.views.sizes() > 0
    feasible = np.column_stack([has_views, np.ones_like(has_views), has_views])
    w = feasible * np.asarray(omega, dtype=np.float64)
    total = w.sum(axis=1)
    w[total == 0, PairKind.PURCHASED_VS_UNOBSERVED] = 1.0
    return w / w.sum(axis=1, keepdims=True)


def draw_biased_pairs(dataset, omega, n, rng, probs=None):
    """``(u, pos, neg, kind)`` arrays drawn by the view-aware biased scheme."""
    if probs is None:
        probs = kind_probabilities(dataset, omega)
    u = _draw_users(dataset, n, rng)
    cum = np.cumsum(probs[u], axis=1)
    # scaling by the row total keeps zero-probability kinds unreachable despite rounding
    r = rng.random(n)[:, None] * cum[:, -1:]
    kind = np.argmax(cum > r, axis=1)
    pos = np.empty(n, dtype=np.int64)
    neg = np.empty(n, dtype=np.int64)
    for k in (0, 1, 2):
        sel = np.flatnonzero(kind == k)
        if len(sel) == 0:
            continue
        us = u[sel]
        if k == PairKind.VIEWED_VS_UNOBSERVED:
            pos[sel] = _pick(dataset.views, us, rng)
        else:
            pos[sel] = _pick(dataset.purchases, us, rng)
        if k == PairKind.PURCHASED_VS_VIEWED:
            neg[sel] = _pick(dataset.views, us, rng)
        else:
            neg[sel] = draw_negatives(dataset, us, rng, exclude_views=True)
    return u, pos, neg, kind


def sample_biased_pair(dataset: FeedbackDataset, omega: Sequence[float], rng: np.random.Generator) -> PairExample:
    u, pos, neg, kind = draw_biased_pairs(dataset, omega, 1, rng)
    return PairExample(int(u[0]), int(pos[0]), int(neg[0]), PairKind(int(kind[0])))


def draw_quads(dataset, n, rng, pair_fallback=False):
    """``(u, i, v, j)`` arrays; ``v == -1`` marks a fallback pair for a viewless user."""
    if pair_fallback:
        u = _draw_users(dataset, n, rng)
    else:
        eligible = np.flatnonzero(dataset.views.sizes() > 0)
        if len(eligible) == 0:
            raise ValueError("no user has both purchases and views")
        u = eligible[rng.integers(0, len(eligible), size=n)]
    i = _pick(dataset.purchases, u, rng)
    v = np.full(n, -1, dtype=np.int64)
    has = np.flatnonzero(dataset.views.sizes()[u] > 0)
    v[has] = _pick(dataset.views, u[has], rng)
    j = draw_negatives(dataset, u, rng, exclude_views=True)
    return u, i, v, j


def sample_quad(dataset: FeedbackDataset, rng: np.random.Generator) -> QuadExample:
    u, i, v, j = draw_quads(dataset, 1, rng)
    return QuadExample(int(u[0]), int(i[0]), int(v[0]), int(j[0]))
