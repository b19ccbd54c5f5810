"""Raw log parsing, preprocessing, dense indexing, sessions and user weights."""

from __future__ import annotations

import datetime as dt
import io
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .core import Behavior, FeedbackDataset, Interaction, ItemSets

logger = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1
DEFAULT_MIN_USER_PURCHASES = 12
DEFAULT_MIN_ITEM_PURCHASES = 16
DEFAULT_SESSION_GAP = 3600

_BEHAVIORS = {"purchase": Behavior.PURCHASE, "view": Behavior.VIEW}


class ParseError(ValueError):
    def __init__(self, offenders: List[Tuple[int, str]], total: int):
        self.offenders = offenders
        self.total = total
        listing = "; ".join(f"line {n}: {why}" for n, why in offenders[:10])
        super().__init__(f"{total} malformed line(s): {listing}")


class EmptyDatasetError(ValueError):
    pass


class GranularityError(ValueError):
    pass


@dataclass(frozen=True)
class RawEvent(Interaction):
    """An Interaction that remembers whether its timestamp was only a date."""

    day_granular: bool = False


def _parse_timestamp(tok: str) -> Tuple[int, bool]:
    tok = tok.strip()
    try:
        return int(tok), False
    except ValueError:
        pass
    day = dt.date.fromisoformat(tok)
    ts = dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc).timestamp()
    return int(ts), True


def _parse_line(line: str) -> Interaction:
    sep = "\t" if "\t" in line else ","
    fields = [f.strip() for f in line.split(sep)]
    if len(fields) != 4:
        raise ValueError(f"expected 4 fields, got {len(fields)}")
    user, item, behavior, stamp = fields
    if not user or not item:
        raise ValueError("empty user or item id")
    kind = _BEHAVIORS.get(behavior.lower())
    if kind is None:
        raise ValueError(f"unknown behavior {behavior!r}")
    try:
        ts, day = _parse_timestamp(stamp)
    except ValueError:
        raise ValueError(f"bad timestamp {stamp!r}") from None
    if ts < 0:
        raise ValueError(f"negative timestamp {ts}")
    if day:
        return RawEvent(user, item, kind, ts, True)
    return Interaction(user, item, kind, ts)


def _looks_like_header(line: str) -> bool:
    try:
        _parse_line(line)
    except ValueError:
        return "user" in line.lower()
    return False


def parse_interactions(stream: Union[TextIO, io.BufferedIOBase, Iterable], strict: bool = True) -> List[Interaction]:
    """Parse ``user_id,item_id,behavior,timestamp`` records in file order.

    Tab-separated lines are accepted too. The timestamp may be integer seconds
    or an ISO date (the event is then flagged as day-granular). In strict mode
    any malformed line raises :class:`ParseError`; otherwise such lines are
    skipped and counted in a warning.
    """
    events: List[Interaction] = []
    offenders: List[Tuple[int, str]] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        line = line.strip()
        if not line:
            continue
        if lineno == 1 and _looks_like_header(line):
            continue
        try:
            events.append(_parse_line(line))
        except ValueError as exc:
            offenders.append((lineno, str(exc)))
    if offenders:
        if strict:
            raise ParseError(offenders[:10], len(offenders))
        logger.warning("skipped %d malformed line(s), first at line %d", len(offenders), offenders[0][0])
    return events


def read_interactions(path: Union[str, Path], strict: bool = True) -> List[Interaction]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_interactions(fh, strict=strict)


def dedup_purchases(events: Sequence[Interaction]) -> List[Interaction]:
    """Keep one purchase per (user, item): the earliest one."""
    earliest: Dict[Tuple[str, str], int] = {}
    for pos, e in enumerate(events):
        if e.behavior is Behavior.PURCHASE:
            key = (e.user, e.item)
            best = earliest.get(key)
            if best is None or e.timestamp < events[best].timestamp:
                earliest[key] = pos
    keep = set(earliest.values())
    return [e for pos, e in enumerate(events) if e.behavior is Behavior.VIEW or pos in keep]


def remove_leaked_views(events: Sequence[Interaction]) -> List[Interaction]:
    """Drop every view on a (user, item) that is also purchased, at any time."""
    bought = {(e.user, e.item) for e in events if e.behavior is Behavior.PURCHASE}
    return [e for e in events if e.behavior is Behavior.PURCHASE or (e.user, e.item) not in bought]


def filter_activity(
    events: Sequence[Interaction],
    min_user_purchases: int = DEFAULT_MIN_USER_PURCHASES,
    min_item_purchases: int = DEFAULT_MIN_ITEM_PURCHASES,
) -> List[Interaction]:
    """Iteratively drop sparse users and items until both thresholds hold.

    All events of a dropped user or item go with it, views included.
    """
    users = {e.user for e in events}
    items = {e.item for e in events}
    purchases = [(e.user, e.item) for e in events if e.behavior is Behavior.PURCHASE]
    while True:
        live = [(u, i) for u, i in purchases if u in users and i in items]
        per_user = Counter(u for u, _ in live)
        per_item = Counter(i for _, i in live)
        new_users = {u for u in users if per_user[u] >= min_user_purchases}
        new_items = {i for i in items if per_item[i] >= min_item_purchases}
        if new_users == users and new_items == items:
            break
        users, items = new_users, new_items
    out = [e for e in events if e.user in users and e.item in items]
    if not any(e.behavior is Behavior.PURCHASE for e in out):
        raise EmptyDatasetError(
            f"no purchases survive thresholds user>={min_user_purchases}, item>={min_item_purchases}"
        )
    return out


def preprocess(
    events: Sequence[Interaction],
    min_user_purchases: int = DEFAULT_MIN_USER_PURCHASES,
    min_item_purchases: int = DEFAULT_MIN_ITEM_PURCHASES,
) -> List[Interaction]:
    events = dedup_purchases(events)
    events = remove_leaked_views(events)
    return filter_activity(events, min_user_purchases, min_item_purchases)


@dataclass(frozen=True)
class IdMap:
    """Bijection between external ids and dense indices."""

    users: Tuple[str, ...]
    items: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_user_index", {u: k for k, u in enumerate(self.users)})
        object.__setattr__(self, "_item_index", {i: k for k, i in enumerate(self.items)})

    def user_index(self, user: str) -> int:
        return self._user_index[user]

    def item_index(self, item: str) -> int:
        return self._item_index[item]


def build_dataset(events: Sequence[Interaction], day_granular: Optional[bool] = None) -> Tuple[FeedbackDataset, IdMap]:
    """Index users and items in first-appearance order and build S_u, V_u.

    Repeated views of the same item keep their earliest timestamp.
    """
    users: Dict[str, int] = {}
    items: Dict[str, int] = {}
    firsts: List[Dict[int, int]] = []
    view_firsts: List[Dict[int, int]] = []
    for e in events:
        u = users.setdefault(e.user, len(users))
        i = items.setdefault(e.item, len(items))
        if u == len(firsts):
            firsts.append({})
            view_firsts.append({})
        target = firsts[u] if e.behavior is Behavior.PURCHASE else view_firsts[u]
        if i not in target or e.timestamp < target[i]:
            target[i] = e.timestamp
    if day_granular is None:
        day_granular = any(getattr(e, "day_granular", False) for e in events)
    dataset = FeedbackDataset(
        len(users),
        len(items),
        ItemSets.from_lists([list(d.items()) for d in firsts]),
        ItemSets.from_lists([list(d.items()) for d in view_firsts]),
        bool(day_granular),
    )
    return dataset, IdMap(tuple(users), tuple(items))


@dataclass(frozen=True)
class Session:
    user: int
    start_ts: int
    end_ts: int
    viewed: frozenset
    purchased: frozenset


def extract_sessions(
    user: int,
    events: Sequence[Tuple[int, int, Behavior]],
    gap: int = DEFAULT_SESSION_GAP,
    day_granular: bool = False,
) -> List[Session]:
    """Split one user's time-sorted ``(timestamp, item, behavior)`` events.

    A new session starts when the gap to the previous event exceeds ``gap``;
    a gap of exactly ``gap`` seconds stays in the same session.
    """
    if day_granular:
        raise GranularityError("session extraction needs sub-day timestamps")
    sessions: List[Session] = []
    start = prev = None
    viewed, purchased = set(), set()
    for ts, item, behavior in events:
        if prev is not None and ts < prev:
            raise ValueError("events must be sorted by timestamp")
        if prev is not None and ts - prev > gap:
            sessions.append(Session(user, start, prev, frozenset(viewed), frozenset(purchased)))
            start, viewed, purchased = None, set(), set()
        if start is None:
            start = ts
        (purchased if behavior is Behavior.PURCHASE else viewed).add(item)
        prev = ts
    if start is not None:
        sessions.append(Session(user, start, prev, frozenset(viewed), frozenset(purchased)))
    return sessions


def user_events(dataset: FeedbackDataset, u: int) -> List[Tuple[int, int, Behavior]]:
    evs = [(int(t), int(i), Behavior.PURCHASE) for i, t in zip(dataset.purchased(u), dataset.purchases.times(u))]
    evs += [(int(t), int(i), Behavior.VIEW) for i, t in zip(dataset.viewed(u), dataset.views.times(u))]
    # purchases sort before views at equal timestamps
    evs.sort(key=lambda e: (e[0], e[2] is Behavior.VIEW, e[1]))
    return evs


def view_purchase_ratio(sessions: Sequence[Session], num_views: Optional[int] = None, num_purchases: Optional[int] = None) -> float:
    """Mean per-session |viewed| / |purchased| over sessions with a purchase.

    When no session has a purchase, falls back to ``num_views / num_purchases``
    (the user's whole-history counts; by default the union over ``sessions``).
    """
    ratios = [len(s.viewed) / len(s.purchased) for s in sessions if s.purchased]
    if ratios:
        return float(np.mean(ratios))
    if num_views is None:
        num_views = len(frozenset().union(*(s.viewed for s in sessions)))
    if num_purchases is None:
        num_purchases = len(frozenset().union(*(s.purchased for s in sessions)))
    if num_purchases == 0:
        raise ValueError("view-purchase ratio undefined for a user without purchases")
    return num_views / num_purchases


def user_weight(ratio, beta: float):
    """Map a view-purchase ratio to a pair weight ``r**b / (r**b + 1)``."""
    powered = np.power(ratio, beta)
    return powered / (powered + 1.0)


@dataclass(frozen=True)
class UserWeights:
    ratio: np.ndarray
    alpha: np.ndarray
    beta: float


def compute_user_weights(dataset: FeedbackDataset, beta: float, gap: int = DEFAULT_SESSION_GAP) -> UserWeights:
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    ratio = np.empty(dataset.num_users)
    for u in range(dataset.num_users):
        sessions = extract_sessions(u, user_events(dataset, u), gap, dataset.timestamps_day_granular)
        ratio[u] = view_purchase_ratio(sessions, len(dataset.viewed(u)), len(dataset.purchased(u)))
    return UserWeights(ratio, user_weight(ratio, beta), beta)


# --- snapshot file -------------------------------------------------------

def save_snapshot(path: Union[str, Path], dataset: FeedbackDataset, ids: IdMap) -> None:
    """Write a tab-separated snapshot; identical inputs give identical bytes."""
    lines = [
        f"#viewbpr-dataset\t{SNAPSHOT_VERSION}",
        f"#meta\t{dataset.num_users}\t{dataset.num_items}\t{int(dataset.timestamps_day_granular)}",
    ]
    lines += [f"U\t{k}\t{u}" for k, u in enumerate(ids.users)]
    lines += [f"I\t{k}\t{i}" for k, i in enumerate(ids.items)]
    for tag, sets in (("P", dataset.purchases), ("V", dataset.views)):
        for u in range(dataset.num_users):
            for i, t in zip(sets.items(u), sets.times(u)):
                lines.append(f"{tag}\t{u}\t{i}\t{t}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_snapshot(path: Union[str, Path]) -> Tuple[FeedbackDataset, IdMap]:
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.readline().rstrip("\n").split("\t")
        if head[0] != "#viewbpr-dataset":
            raise ValueError(f"{path}: not a dataset snapshot")
        if int(head[1]) != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {head[1]}")
        _, m, n, day = fh.readline().rstrip("\n").split("\t")
        m, n = int(m), int(n)
        users, items = [None] * m, [None] * n
        per = {"P": [[] for _ in range(m)], "V": [[] for _ in range(m)]}
        for line in fh:
            f = line.rstrip("\n").split("\t")
            if f[0] == "U":
                users[int(f[1])] = f[2]
            elif f[0] == "I":
                items[int(f[1])] = f[2]
            else:
                per[f[0]][int(f[1])].append((int(f[2]), int(f[3])))
    dataset = FeedbackDataset(m, n, ItemSets.from_lists(per["P"]), ItemSets.from_lists(per["V"]), day == "1")
    return dataset, IdMap(tuple(users), tuple(items))


def table_summary(dataset: FeedbackDataset) -> str:
    s = dataset.summary()
    return (
        "Purchase#\tView#\tUser#\tItem#\tSparsity\n"
        f"{s['purchases']}\t{s['views']}\t{s['users']}\t{s['items']}\t"
        f"{100 * s['purchase_sparsity']:.2f}%/{100 * s['view_sparsity']:.2f}%"
    )

