"""Matrix factorization scorer: init, prediction, top-k ranking, checkpoints."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, List, Tuple, Union

import numpy as np

from .core import FactorModel

CHECKPOINT_VERSION = 1
_MAGIC = "#viewbpr-model"


def init_model(num_users: int, num_items: int, factors: int = 32, seed: int = 0, scale: float = 0.01) -> FactorModel:
    """Draw P and Q i.i.d. from N(0, scale^2) with a generator seeded by ``seed``."""
    if min(num_users, num_items, factors) < 1:
        raise ValueError("num_users, num_items and factors must be >= 1")
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    P = rng.normal(0.0, scale, size=(num_users, factors))
    Q = rng.normal(0.0, scale, size=(num_items, factors))
    return FactorModel(P, Q, seed)


def predict(model: FactorModel, u: int, i: int) -> float:
    if not (0 <= u < model.num_users and 0 <= i < model.num_items):
        raise IndexError(f"(user {u}, item {i}) out of range for {model.num_users}x{model.num_items} model")
    return float(model.P[u] @ model.Q[i])


def top_k(scores: np.ndarray, excluded: Iterable[int], k: int) -> List[Tuple[int, float]]:
    """Highest ``k`` scores outside ``excluded``, ties broken by lower index.

    Uses a linear-time partition, so only the winners are sorted.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    mask = np.ones(len(scores), dtype=bool)
    excluded = np.fromiter(excluded, dtype=np.int64)
    mask[excluded] = False
    cand = np.flatnonzero(mask)
    s = scores[cand]
    if len(cand) > k:
        # k-th largest score; keep everything strictly above plus enough ties
        threshold = np.partition(s, len(s) - k)[len(s) - k]
        above = s > threshold
        n_ties = k - int(above.sum())
        ties = np.flatnonzero(s == threshold)[:n_ties]
        keep = np.concatenate([np.flatnonzero(above), ties])
        cand, s = cand[keep], s[keep]
    order = np.lexsort((cand, -s))
    return [(int(cand[o]), float(s[o])) for o in order]


def rank_items(model, u: int, excluded: Iterable[int], k: int) -> List[Tuple[int, float]]:
    """Top-``k`` (item, score) pairs for user ``u`` from any object with ``scores(u)``."""
    return top_k(model.scores(u), excluded, k)


def save_model(path: Union[str, Path], model: FactorModel) -> None:
    """Text header line, then P and Q as row-major little-endian float64."""
    header = f"{_MAGIC}\t{CHECKPOINT_VERSION}\t{model.num_users}\t{model.num_items}\t{model.K}\t{model.seed}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(model.P, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.Q, dtype="<f8").tobytes())


def load_model(path: Union[str, Path]) -> FactorModel:
    with open(path, "rb") as fh:
        head = fh.readline().decode("ascii").rstrip("\n").split("\t")
        if head[0] != _MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        if int(head[1]) != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {head[1]}")
        m, n, k, seed = (int(x) for x in head[2:6])
        body = np.frombuffer(fh.read(), dtype="<f8")
    if body.size != (m + n) * k:
        raise ValueError(f"{path}: truncated checkpoint ({body.size} of {(m + n) * k} values)")
    P = body[: m * k].reshape(m, k).astype(np.float64)
    Q = body[m * k:].reshape(n, k).astype(np.float64)
    return FactorModel(P, Q, seed)
