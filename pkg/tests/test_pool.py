from __future__ import annotations

import dataclasses
import io
import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import seg
from oracles import ListLRU, naive_find
from privkv.pool import InsertKind, KVPool, PoolConfig

W = 4


def make_pool(capacity=10_000, w=W):
    return KVPool(PoolConfig(capacity_tokens=capacity, window_len=w, hash_seed=11))


def test_contained_is_dropped():
    pool = make_pool(100_000, 16)
    a = list(range(1, 201))
    out_a = pool.insert(seg(a, pool.params, 16), 1)
    out_b = pool.insert(seg(a[49:150], pool.params, 16), 2)
    assert out_a.kind is InsertKind.STORED
    assert out_b.kind is InsertKind.DROPPED_AS_CONTAINED and out_b.entry_id == out_a.entry_id
    assert len(pool) == 1 and pool.total_tokens == 200


def test_container_supersedes():
    pool = make_pool(100_000, 16)
    a = list(range(1, 201))
    b = pool.insert(seg(a[49:150], pool.params, 16), 1)
    out = pool.insert(seg(a, pool.params, 16), 2)
    assert out.kind is InsertKind.SUPERSEDED_EXISTING and out.superseded == (b.entry_id,)
    assert [e.segment.tokens for e in pool.entries.values()] == [tuple(a)]
    pool.check_invariants()


def test_duplicate_refreshes_last_used():
    pool = make_pool()
    s = seg([1, 2, 3, 4, 5], pool.params, W)
    first = pool.insert(s, 1)
    again = pool.insert(s, 7)
    assert again.kind is InsertKind.DUPLICATE and again.entry_id == first.entry_id
    assert pool.entries[first.entry_id].last_used == 7
    assert len(pool) == 1


def test_lru_eviction_capacity_300():
    pool = make_pool(300, 16)
    ids = []
    for k in range(3):
        toks = [1000 * (k + 1) + i for i in range(128)]
        out = pool.insert(seg(toks, pool.params, 16), k + 1)
        ids.append(out.entry_id)
        if k == 1:
            pool.touch(ids[0], 10)
    # entry 2 (inserted at t=2, never touched) is the least recently used
    assert set(pool.entries) == {ids[0], ids[2]}
    assert pool.total_tokens == 256


def test_untouched_evicted_in_insertion_order():
    pool = make_pool(12)
    evicted = []
    for k in range(6):
        out = pool.insert(seg([10 * k + i for i in range(1, 5)], pool.params, W), k)
        evicted.extend(out.evicted)
    assert evicted == [1, 2, 3]


def test_lookup_prefix():
    pool = make_pool()
    assert pool.lookup_prefix(123) == set()
    a = pool.insert(seg([1, 2, 3, 4, 5, 6], pool.params, W), 1)
    b = pool.insert(seg([1, 2, 3, 4, 9, 9], pool.params, W), 2)
    h = pool.entries[a.entry_id].segment.prefix_hash
    assert pool.lookup_prefix(h) == {a.entry_id, b.entry_id}


def test_touch_unknown_id():
    with pytest.raises(KeyError):
        make_pool().touch(99, 1)


def test_insert_validation():
    pool = make_pool()
    with pytest.raises(ValueError):
        pool.insert(seg([1, 2, 3], pool.params, 3), 1)  # shorter than window
    with pytest.raises(ValueError):
        pool.insert(seg([1, 2, 3, 4, 5], pool.params, 5), 1)  # window mismatch
    s = seg([1, 2, 3, 4, 5], pool.params, W)
    with pytest.raises(ValueError):
        pool.insert(dataclasses.replace(s, span_mask=(0, 0, 1, 0, 0)), 1)
    other = seg([1, 2, 3, 4, 5], KVPool(PoolConfig(100, W, hash_seed=99)).params, W)
    with pytest.raises(ValueError):
        pool.insert(other, 1)
    with pytest.raises(ValueError):
        PoolConfig(capacity_tokens=3, window_len=4)


def test_snapshot_jsonl():
    pool = make_pool()
    pool.insert(seg([1, 2, 3, 4, 5], pool.params, W, recompute=[1, 0, 0, 0, 0]), 3)
    buf = io.StringIO()
    pool.write_snapshot(buf)
    row = json.loads(buf.getvalue().splitlines()[0])
    assert set(row) == {"id", "origin", "tokens", "recompute_mask", "digest", "prefix_hash", "full_hash", "last_used"}
    assert row["tokens"] == [1, 2, 3, 4, 5] and row["last_used"] == 3
    assert len(bytes.fromhex(row["digest"])) == 32
    assert int(row["prefix_hash"]) == pool.entries[1].segment.prefix_hash


def _is_substring(small, big):
    return len(small) < len(big) and bool(naive_find(big, small))


ops = st.lists(
    st.tuples(st.integers(0, 7), st.integers(0, 12), st.integers(4, 14), st.booleans()),
    min_size=1,
    max_size=40,
)


@given(ops, st.integers(8, 80))
def test_random_operations_keep_invariants(op_list, capacity):
    """Containment-freedom, budget and index consistency after every step."""
    rng = random.Random(len(op_list))
    bases = [[rng.randrange(1, 4) for _ in range(30)] for _ in range(8)]
    pool = make_pool(max(capacity, W))
    for t, (b, start, length, touch) in enumerate(op_list):
        toks = bases[b][start : start + length]
        if len(toks) < W:
            continue
        if len(toks) > pool.config.capacity_tokens:
            continue
        pool.insert(seg(toks, pool.params, W), t)
        if touch and pool.entries:
            pool.touch(rng.choice(sorted(pool.entries)), t)
        pool.check_invariants()
        stored = [e.segment.tokens for e in pool.entries.values()]
        assert len(set(stored)) == len(stored)
        for x in stored:
            for y in stored:
                assert not _is_substring(x, y)


def test_eviction_matches_reference_lru():
    rng = random.Random(5)
    pool = make_pool(60)
    ref = ListLRU(60)
    key_of = {}
    for t in range(200):
        if key_of and rng.random() < 0.4:
            eid = rng.choice(sorted(key_of))
            pool.touch(eid, t)
            ref.touch(key_of[eid])
            continue
        length = rng.randrange(4, 20)
        toks = [t * 100 + i for i in range(length)]  # disjoint contents
        out = pool.insert(seg(toks, pool.params, W), t)
        key_of[out.entry_id] = f"k{out.entry_id}"
        evicted = ref.insert(f"k{out.entry_id}", length)
        assert [f"k{e}" for e in out.evicted] == evicted
        for e in out.evicted:
            del key_of[e]
    assert {f"k{e}" for e in pool.entries} == {k for k, _ in ref.order}


def test_record_request_feeds_baseline_views():
    from privkv.core import Request

    pool = make_pool()
    req = Request("r", "alice", (1, 2, 3, 4, 5, 6), ("user",) * 6)
    pool.record_request(req, (0, 0, 0, 1, 0, 0))
    assert pool.sessions.prefix_len("alice", (1, 2, 3, 9)) == 3
    assert pool.sessions.prefix_len("bob", (1, 2, 3)) == 0
    assert pool.prefixes.longest((1, 2, 3, 4, 5), (0,) * 5) == 3
    assert pool.chunks.contains(2, (1, 2)) and not pool.chunks.contains(2, (3, 4))
    assert pool.chunks.contains(3, (1, 2, 3)) and not pool.chunks.contains(3, (4, 5, 6))
