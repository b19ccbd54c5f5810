import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viewbpr.core import Behavior, FeedbackDataset, Interaction, validate_dataset
from viewbpr.ingest import (
    EmptyDatasetError,
    GranularityError,
    ParseError,
    Session,
    build_dataset,
    compute_user_weights,
    dedup_purchases,
    extract_sessions,
    filter_activity,
    load_snapshot,
    parse_interactions,
    preprocess,
    remove_leaked_views,
    save_snapshot,
    user_weight,
    view_purchase_ratio,
)

P, V = Behavior.PURCHASE, Behavior.VIEW


def ev(u, i, b, t):
    return Interaction(u, i, b, t)


# --- parsing ---------------------------------------------------------------

def test_parse_view_line():
    assert parse_interactions(io.StringIO("u1,i9,view,1495699200\n")) == [ev("u1", "i9", V, 1495699200)]


def test_parse_unknown_behavior_rejected():
    with pytest.raises(ParseError) as exc:
        parse_interactions(io.StringIO("u1,i9,buy,1495699200\n"))
    assert exc.value.offenders[0][0] == 1


def test_parse_empty_file():
    assert parse_interactions(io.StringIO("")) == []


def test_parse_header_case_and_tabs():
    text = "user_id,item_id,behavior,timestamp\nA,x,PURCHASE,5\nB\ty\tView\t7\n"
    assert parse_interactions(io.StringIO(text)) == [ev("A", "x", P, 5), ev("B", "y", V, 7)]


def test_parse_bytes_stream():
    assert parse_interactions(io.BytesIO(b"a,b,purchase,1\n")) == [ev("a", "b", P, 1)]


def test_parse_strict_lists_first_ten_offenders():
    text = "\n".join(["a,b,purchase,1"] + [f"bad line {k}" for k in range(15)])
    with pytest.raises(ParseError) as exc:
        parse_interactions(io.StringIO(text))
    assert exc.value.total == 15
    assert [n for n, _ in exc.value.offenders] == list(range(2, 12))


def test_parse_lenient_skips(caplog):
    text = "a,b,purchase,1\nnonsense\nc,d,view,-4\ne,f,view,3\n"
    out = parse_interactions(io.StringIO(text), strict=False)
    assert [e.user for e in out] == ["a", "e"]
    assert "skipped 2" in caplog.text


def test_parse_iso_date_is_day_granular():
    (e,) = parse_interactions(io.StringIO("u,i,view,2014-06-01\n"))
    assert e.timestamp == 1401580800
    assert e.day_granular
    d, _ = build_dataset([e, ev("u", "j", P, 1401580800)])
    assert d.timestamps_day_granular


# --- preprocessing -------------------------------------------------------------

def test_dedup_keeps_earliest():
    assert dedup_purchases([ev("u", "i", P, 10), ev("u", "i", P, 5)]) == [ev("u", "i", P, 5)]


def test_dedup_leaves_views():
    evs = [ev("u", "i", V, 3), ev("u", "i", V, 3)]
    assert dedup_purchases(evs) == evs


def test_dedup_identity():
    assert dedup_purchases([ev("u", "i", P, 7)]) == [ev("u", "i", P, 7)]


def test_leak_filter_removes_earlier_view():
    assert remove_leaked_views([ev("u", "i", V, 1), ev("u", "i", P, 9)]) == [ev("u", "i", P, 9)]


def test_leak_filter_other_items_untouched():
    evs = [ev("u", "i", V, 9), ev("u", "j", P, 1)]
    assert remove_leaked_views(evs) == evs


def test_leak_filter_identity():
    assert remove_leaked_views([ev("u", "i", P, 1)]) == [ev("u", "i", P, 1)]


def test_activity_noop_thresholds():
    evs = [ev("a", "x", P, 1), ev("b", "y", P, 2), ev("a", "y", P, 3)]
    assert filter_activity(evs, 1, 1) == evs


def test_activity_two_user_trace():
    # a buys {x, y}, b buys {x}: b falls below 2 and goes; x keeps a's purchase
    evs = [ev("a", "x", P, 1), ev("a", "y", P, 2), ev("b", "x", P, 3), ev("b", "z", V, 4)]
    assert filter_activity(evs, 2, 1) == [ev("a", "x", P, 1), ev("a", "y", P, 2)]


def test_activity_cascade():
    # dropping item q leaves user c with one purchase, which then leaves item r with one
    evs = [
        ev("a", "p", P, 1), ev("a", "r", P, 2),
        ev("b", "p", P, 3), ev("b", "r", P, 4),
        ev("c", "q", P, 5), ev("c", "s", P, 6),
        ev("d", "s", P, 7), ev("d", "p", P, 8),
        ev("c", "r", V, 9),
    ]
    out = filter_activity(evs, 2, 2)
    assert {e.user for e in out} == {"a", "b"}
    assert {e.item for e in out} == {"p", "r"}
    assert all(e.behavior is P for e in out)


def test_activity_empty_result():
    with pytest.raises(EmptyDatasetError):
        filter_activity([ev("a", "x", P, 1)], 2, 1)


def brute_force_core(events, min_user, min_item):
    """Largest (users, items) pair satisfying both thresholds, by enumeration."""
    purchases = {(e.user, e.item) for e in events if e.behavior is P}
    users = sorted({e.user for e in events})
    items = sorted({e.item for e in events})

    def subsets(xs):
        return itertools.chain.from_iterable(itertools.combinations(xs, r) for r in range(len(xs) + 1))

    best_u, best_i = set(), set()
    for us in subsets(users):
        us = set(us)
        for its in subsets(items):
            its = set(its)
            live = [(u, i) for u, i in purchases if u in us and i in its]
            if all(sum(1 for x, _ in live if x == u) >= min_user for u in us) and all(
                sum(1 for _, y in live if y == i) >= min_item for i in its
            ):
                best_u |= us
                best_i |= its
    return best_u, best_i


@pytest.mark.parametrize("seed", range(25))
def test_activity_matches_brute_force_fixpoint(seed):
    rng = np.random.default_rng(seed)
    n_users, n_items = rng.integers(2, 6), rng.integers(2, 6)
    events = []
    for u in range(n_users):
        for i in range(n_items):
            r = rng.random()
            if r < 0.45:
                events.append(ev(f"u{u}", f"i{i}", P, int(rng.integers(100))))
            elif r < 0.6:
                events.append(ev(f"u{u}", f"i{i}", V, int(rng.integers(100))))
    users, items = brute_force_core(events, 2, 2)
    expected = [e for e in events if e.user in users and e.item in items]
    if not any(e.behavior is P for e in expected):
        with pytest.raises(EmptyDatasetError):
            filter_activity(events, 2, 2)
    else:
        assert filter_activity(events, 2, 2) == expected


def random_log(rng, n_users=8, n_items=10, n_events=120):
    kinds = [P, V]
    return [
        ev(f"u{rng.integers(n_users)}", f"i{rng.integers(n_items)}", kinds[rng.integers(2)], int(rng.integers(1000)))
        for _ in range(n_events)
    ]


@pytest.mark.parametrize("seed", range(10))
def test_pipeline_invariants_and_idempotence(seed):
    rng = np.random.default_rng(seed)
    events = random_log(rng)
    try:
        out = preprocess(events, 3, 2)
    except EmptyDatasetError:
        pytest.skip("thresholds emptied this log")
    assert dedup_purchases(out) == out
    assert remove_leaked_views(out) == out
    assert filter_activity(out, 3, 2) == out
    d, ids = build_dataset(out)
    assert validate_dataset(d) == []
    assert (d.purchases.sizes() >= 3).all()
    counts = np.bincount(d.purchases.indices, minlength=d.num_items)
    assert (counts >= 2).all()


# --- dataset building -------------------------------------------------------------

def test_build_first_appearance_order():
    d, ids = build_dataset([ev("b", "x", P, 1), ev("a", "y", P, 2)])
    assert ids.user_index("b") == 0 and ids.user_index("a") == 1
    assert ids.users == ("b", "a")


def test_build_round_trip():
    rng = np.random.default_rng(0)
    events = preprocess(random_log(rng), 1, 1)
    d, ids = build_dataset(events)
    for e in events:
        assert ids.users[ids.user_index(e.user)] == e.user
        assert ids.items[ids.item_index(e.item)] == e.item


@pytest.mark.parametrize("seed", range(5))
def test_build_counts_match_independent_count(seed):
    rng = np.random.default_rng(seed)
    events = preprocess(random_log(rng, n_events=200), 1, 1)
    d, ids = build_dataset(events)
    purchase_pairs = set()
    view_pairs = set()
    for e in events:
        (purchase_pairs if e.behavior is P else view_pairs).add((e.user, e.item))
    assert d.num_purchases == len(purchase_pairs)
    assert d.num_views == len(view_pairs)
    assert d.num_users == len({e.user for e in events})
    assert d.num_items == len({e.item for e in events})
    s = d.summary()
    cells = d.num_users * d.num_items
    assert s["purchase_sparsity"] == pytest.approx(1 - len(purchase_pairs) / cells)
    assert s["view_sparsity"] == pytest.approx(1 - len(view_pairs) / cells)
    for u, i in purchase_pairs:
        assert d.is_purchased(ids.user_index(u), ids.item_index(i))


def test_build_keeps_earliest_timestamp_per_pair():
    d, _ = build_dataset([ev("u", "x", P, 9), ev("u", "y", V, 8), ev("u", "y", V, 3)])
    assert d.views.times(0).tolist() == [3]


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    d, ids = build_dataset(preprocess(random_log(rng), 1, 1))
    path = tmp_path / "snap.tsv"
    save_snapshot(path, d, ids)
    d2, ids2 = load_snapshot(path)
    assert ids2 == ids
    assert (d2.num_users, d2.num_items) == (d.num_users, d.num_items)
    for a, b in ((d.purchases, d2.purchases), (d.views, d2.views)):
        assert np.array_equal(a.indptr, b.indptr)
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.timestamps, b.timestamps)
    save_snapshot(tmp_path / "again.tsv", d2, ids2)
    assert (tmp_path / "again.tsv").read_bytes() == path.read_bytes()


# --- sessions and weights --------------------------------------------------------

def _evs(stamps):
    return [(t, k, V) for k, t in enumerate(stamps)]


def test_sessions_split_on_large_gap():
    s = extract_sessions(0, _evs([0, 100, 5000]), 3600)
    assert [(x.start_ts, x.end_ts) for x in s] == [(0, 100), (5000, 5000)]


def test_single_event_session():
    s = extract_sessions(0, _evs([42]), 3600)
    assert len(s) == 1 and s[0].viewed == {0}


def test_gap_equal_to_threshold_joins():
    assert len(extract_sessions(0, _evs([0, 3600]), 3600)) == 1
    assert len(extract_sessions(0, _evs([0, 3601]), 3600)) == 2


def test_sessions_refuse_day_granular():
    with pytest.raises(GranularityError):
        extract_sessions(0, _evs([0]), 3600, day_granular=True)


@given(st.lists(st.integers(0, 20000), min_size=1, max_size=30), st.integers(1, 5000))
@settings(max_examples=100, deadline=None)
def test_sessions_partition_input(stamps, gap):
    stamps = sorted(stamps)
    events = _evs(stamps)
    sessions = extract_sessions(0, events, gap)
    members = sorted(itertools.chain.from_iterable(s.viewed for s in sessions))
    assert members == list(range(len(stamps)))
    for a, b in zip(sessions, sessions[1:]):
        assert a.end_ts < b.start_ts and b.start_ts - a.end_ts > gap
    for s in sessions:
        inside = [t for t in stamps if s.start_ts <= t <= s.end_ts]
        assert all(y - x <= gap for x, y in zip(inside, inside[1:]))


def _session(n_views, n_purchases, offset=0):
    return Session(0, 0, 0, frozenset(range(offset, offset + n_views)), frozenset(range(100 + offset, 100 + offset + n_purchases)))


def test_ratio_mean_over_sessions():
    assert view_purchase_ratio([_session(2, 1), _session(4, 2, 10)]) == 2.0


def test_ratio_skips_purchase_free_sessions():
    assert view_purchase_ratio([_session(3, 0), _session(2, 2, 10)]) == 1.0


def test_ratio_global_fallback():
    sessions = [_session(3, 0), _session(3, 0, 10)]
    assert view_purchase_ratio(sessions, num_views=6, num_purchases=3) == 2.0


def test_ratio_without_any_purchase_is_an_error():
    with pytest.raises(ValueError):
        view_purchase_ratio([_session(3, 0)])


def test_user_weight_examples():
    assert user_weight(1.0, 0.3) == 0.5
    assert user_weight(1.0, 7.0) == 0.5
    assert user_weight(4.0, 0.5) == 2.0 / 3.0
    assert user_weight(0.0, 0.5) == 0.0


def test_compute_user_weights(small_dataset):
    w = compute_user_weights(small_dataset, beta=1.0, gap=3600)
    # user 0: one session with views {2,3} and purchases {0,1}; user 2 has no views
    assert w.ratio.tolist() == [1.0, 1.0, 0.0]
    assert w.alpha.tolist() == [0.5, 0.5, 0.0]


def test_compute_user_weights_day_granular_refused():
    d = FeedbackDataset.from_sets(1, 3, [[0]], [[1]], day_granular=True)
    with pytest.raises(GranularityError):
        compute_user_weights(d, 0.5)
