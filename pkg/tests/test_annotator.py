from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import best_span, random_attention, recompute_set
from privkv.annotator import (
    AnnotatorConfig,
    WorkStats,
    annotate_request,
    mark_recompute,
    recompute_count,
    select_reusable,
)
from privkv.core import CoarseSegment, Request, SegmentSpan
from privkv.hashing import HashParams, digest, hash_tokens
from privkv.sat import build_in_place
from privkv.simkit.attention import AttentionGenParams, gen_attention

PARAMS = HashParams.from_seed(5)


def test_published_defaults():
    # Published defaults: 128-token minimum segment length and 25% default recompute rate.
    cfg = AnnotatorConfig()
    assert cfg.min_segment_len == 128 and cfg.rho == 0.25


def test_config_validation():
    with pytest.raises(ValueError):
        AnnotatorConfig(min_segment_len=0)
    with pytest.raises(ValueError):
        AnnotatorConfig(rho=1.5)


def test_short_segment_yields_none():
    sat = build_in_place(random_attention(np.random.default_rng(0), 10))
    assert select_reusable(sat, CoarseSegment(2, 5), AnnotatorConfig(5, 0.25)) is None


def test_block_diagonal_selects_whole_block():
    n = 12
    A = np.zeros((n, n))
    rng = np.random.default_rng(1)
    for a, b in [(0, 4), (4, 12)]:
        blk = np.tril(rng.random((b - a, b - a)) + 0.1)
        A[a:b, a:b] = blk / blk.sum(axis=1, keepdims=True)
    sat = build_in_place(A)
    span = select_reusable(sat, CoarseSegment(5, 12), AnnotatorConfig(1, 0.25))
    assert (span.l, span.r) == (5, 12)
    assert span.score == pytest.approx(8, abs=1e-9)


def test_random_24_token_matrix_matches_exhaustive():
    A = random_attention(np.random.default_rng(24), 24)
    ref = best_span(A.tolist(), 5, 20, 4)
    span = select_reusable(build_in_place(A.copy()), CoarseSegment(5, 20), AnnotatorConfig(4))
    assert (span.l, span.r) == ref[:2]
    assert span.score == pytest.approx(ref[2], abs=1e-9)


@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 10**6))
def test_select_matches_oracle(n, m, seed):
    rng = np.random.default_rng(seed)
    A = random_attention(rng, n)
    a, b = sorted(rng.integers(1, n + 1, 2))
    ref = best_span(A.tolist(), int(a), int(b), m)
    span = select_reusable(build_in_place(A.copy()), CoarseSegment(int(a), int(b)), AnnotatorConfig(m))
    if ref is None:
        assert span is None
    else:
        assert (span.l, span.r) == ref[:2]


def test_nonpositive_scores_rejected():
    # Every token attends only to the first token: all spans with l > 1 score < 0.
    n = 6
    A = np.zeros((n, n))
    A[:, 0] = 1.0
    sat = build_in_place(A)
    assert select_reusable(sat, CoarseSegment(3, 6), AnnotatorConfig(1)) is None


def test_ties_prefer_longer_then_leftmost():
    # Identity attention: every span [l,r] scores its length, so the whole segment wins.
    sat = build_in_place(np.eye(8))
    span = select_reusable(sat, CoarseSegment(2, 7), AnnotatorConfig(2))
    assert (span.l, span.r) == (2, 7)
    # Spans where only the length-1 diagonal counts: isolate two equal-scoring singletons.
    A = np.zeros((4, 4))
    A[0, 0] = 1.0
    A[1, 0] = 1.0
    A[2, 2] = 1.0
    A[3, 2] = 1.0
    sat = build_in_place(A)
    # Candidates in [2,4] with min_len 1: (3,3)=1 and (3,4)=1 tie, longer wins.
    span = select_reusable(sat, CoarseSegment(2, 4), AnnotatorConfig(1))
    assert (span.l, span.r) == (3, 4)


@pytest.mark.parametrize("rho, ones", [(0.0, 0), (1.0, 10), (0.25, 3), (0.1, 1)])
def test_recompute_counts(rho, ones):
    A = random_attention(np.random.default_rng(2), 12)
    mask = mark_recompute(build_in_place(A), SegmentSpan(3, 12, 1.0), AnnotatorConfig(1, rho))
    assert sum(mask) == ones == recompute_count(10, rho)


def test_recompute_count_ceiling():
    assert recompute_count(30, 0.1) == 3
    assert recompute_count(7, 0.25) == 2
    assert recompute_count(128, 0.25) == 32


@given(st.integers(2, 30), st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 1.0]), st.integers(0, 10**6))
def test_recompute_matches_oracle(n, rho, seed):
    rng = np.random.default_rng(seed)
    A = random_attention(rng, n)
    l, r = sorted(int(x) for x in rng.integers(1, n + 1, 2))
    mask = mark_recompute(build_in_place(A.copy()), SegmentSpan(l, r, 0.0), AnnotatorConfig(1, rho))
    assert {l + k for k, bit in enumerate(mask) if bit} == recompute_set(A.tolist(), l, r, rho)


def test_recompute_ties_go_to_smaller_index():
    # Identity attention: every token has inter - intra = -1, a full tie.
    mask = mark_recompute(build_in_place(np.eye(8)), SegmentSpan(2, 8, 7.0), AnnotatorConfig(1, 0.3))
    assert mask == (1, 1, 1, 0, 0, 0, 0)


def _request(n):
    return Request("r", "u", tuple(range(1, n + 1)), ("user",) * n)


def test_annotate_all_sensitive_is_empty():
    A = random_attention(np.random.default_rng(0), 10)
    assert annotate_request(_request(10), (1,) * 10, A, AnnotatorConfig(2), PARAMS) == []


def test_annotate_segment_fields_and_containment():
    n = 40
    A = gen_attention(n, AttentionGenParams(block_spans=((1, 15), (16, 40)), seed=3))
    mask = [0] * n
    mask[17] = 1
    mask[30] = 1
    segs = annotate_request(_request(n), mask, A, AnnotatorConfig(4, 0.25), PARAMS)
    assert 1 <= len(segs) <= 3
    prev_r = 0
    for seg in segs:
        _, l, r = seg.origin
        assert l > prev_r
        prev_r = r
        assert all(mask[p - 1] == 0 for p in range(l, r + 1))
        assert seg.tokens == tuple(range(l, r + 1))
        assert len(seg) >= 4
        assert sum(seg.recompute_mask) == recompute_count(len(seg), 0.25)
        assert seg.prefix_hash == hash_tokens(seg.tokens[:4], PARAMS)
        assert seg.full_hash == hash_tokens(seg.tokens, PARAMS)
        assert seg.digest == digest(seg.tokens)
        assert seg.span_mask == (0,) * len(seg)


def test_annotate_dimension_errors():
    A = random_attention(np.random.default_rng(0), 5)
    with pytest.raises(ValueError):
        annotate_request(_request(5), (0,) * 4, A, AnnotatorConfig(2), PARAMS)
    with pytest.raises(ValueError):
        annotate_request(_request(6), (0,) * 6, A, AnnotatorConfig(2), PARAMS)


def test_annotate_deterministic():
    A = gen_attention(30, AttentionGenParams(seed=1))
    out1 = annotate_request(_request(30), (0,) * 30, A.copy(), AnnotatorConfig(3), PARAMS)
    out2 = annotate_request(_request(30), (0,) * 30, A.copy(), AnnotatorConfig(3), PARAMS)
    assert out1 == out2


def test_work_counter_is_quadratic_bound():
    n = 50
    stats = WorkStats()
    A = random_attention(np.random.default_rng(4), n)
    annotate_request(_request(n), (0,) * n, A, AnnotatorConfig(1), PARAMS, stats)
    assert n * (n + 1) // 2 <= stats.candidates <= n * (n + 1)
