from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privkv.detector import apply_policy
from privkv.simkit.attention import AttentionGenParams, gen_attention, region_blocks
from privkv.simkit.workload import (
    WorkloadParams,
    category_sets,
    default_dictionary_policy,
    gen_workload,
    read_workload,
    write_workload,
)


def test_gen_attention_trivial_cases():
    assert gen_attention(1, AttentionGenParams()).tolist() == [[1.0]]
    A = gen_attention(6, AttentionGenParams(lambda_decay=1e6, noise=0.0))
    np.testing.assert_allclose(A, np.eye(6), atol=1e-12)
    with pytest.raises(ValueError):
        gen_attention(0, AttentionGenParams())
    with pytest.raises(ValueError):
        AttentionGenParams(lambda_decay=0)


@given(
    st.integers(1, 40),
    st.floats(0.001, 5),
    st.floats(0, 3),
    st.floats(0, 1),
    st.integers(0, 1000),
)
def test_gen_attention_is_causal_and_stochastic(n, lam, self_w, noise, seed):
    spans = ((1, n // 2), (n // 2 + 1, n)) if n > 1 else ()
    A = gen_attention(n, AttentionGenParams(lam, self_w, spans, 4.0, noise, seed))
    assert np.all(np.triu(A, 1) == 0)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(A, gen_attention(n, AttentionGenParams(lam, self_w, spans, 4.0, noise, seed)))


def test_block_boost_keeps_mass_inside_block():
    A = gen_attention(20, AttentionGenParams(block_spans=((1, 10), (11, 20)), block_boost=50.0, noise=0.0))
    inside = A[10:, 10:].sum(axis=1)
    plain = gen_attention(20, AttentionGenParams(noise=0.0))[10:, 10:].sum(axis=1)
    assert np.all(inside > plain)


def test_region_blocks():
    assert region_blocks(["system", "system", "user", "public", "public"]) == ((1, 2), (3, 3), (4, 5))
    assert region_blocks([]) == ()


def test_workload_zero_density_identical_span():
    p = WorkloadParams(num_pairs=3, prompt_len=64, shared_span_len=32, sensitive_density=0.0, vocab_size=512)
    for pair in gen_workload(p):
        w, r = pair.writer, pair.reader
        assert w.tokens == r.tokens
        assert sum(pair.writer_truth) == 0


def test_workload_geometry_validation():
    with pytest.raises(ValueError):
        WorkloadParams(prompt_len=10, shared_span_len=11)
    with pytest.raises(ValueError):
        WorkloadParams(sensitive_density=1.5)
    with pytest.raises(ValueError):
        WorkloadParams(prompt_len=100, shared_span_len=90, shared_span_offset_jitter=20)
    with pytest.raises(ValueError):
        WorkloadParams(vocab_size=8, category_size=4)


def test_workload_shared_span_shifted():
    p = WorkloadParams(num_pairs=20, prompt_len=256, shared_span_len=100, shared_span_offset_jitter=40,
                       shift_min=1, sensitive_density=0.1, vocab_size=4096, seed=4)
    for pair in gen_workload(p):
        lead = p.lead
        span = pair.reader.tokens[lead : lead + 100]
        assert pair.writer.tokens[lead + pair.shift : lead + pair.shift + 100] == span
        assert 1 <= pair.shift <= 40
        assert all(l == "public" for l in pair.reader.region_labels[lead : lead + 100])
        # secrets sit in user regions and differ between writer and reader
        for i, bit in enumerate(pair.reader_truth):
            if bit:
                assert pair.reader.region_labels[i] == "user"
        for i, bit in enumerate(pair.writer_truth):
            if bit:
                j = i - pair.shift
                assert pair.writer.tokens[i] != pair.reader.tokens[j]
                assert pair.reader_truth[j] == 1


def test_secret_counts_follow_binomial():
    for density in (0.0, 0.05, 0.1, 0.2):
        p = WorkloadParams(num_pairs=50, prompt_len=400, shared_span_len=200, sensitive_density=density,
                           vocab_size=4096, seed=1)
        counts = [sum(pair.reader_truth) for pair in gen_workload(p)]
        user = 200
        mean, sd = user * density, np.sqrt(user * density * (1 - density) / len(counts))
        assert abs(np.mean(counts) - mean) <= 4 * sd + 1e-12


def test_categories_and_dictionary_policy():
    p = WorkloadParams(num_pairs=2, prompt_len=200, shared_span_len=100, category_density=0.3,
                       sensitive_density=0.0, vocab_size=256, seed=2)
    cats = category_sets(p)
    assert sum(len(v) for v in cats.values()) == 3 * p.cat_size
    assert max(max(v) for v in cats.values()) == 255
    pairs = gen_workload(p)
    pol = default_dictionary_policy(p, "high")
    for pair in pairs:
        stripped = type(pair.reader)(pair.reader.request_id, pair.reader.user_id, pair.reader.tokens,
                                     pair.reader.region_labels)
        mask = apply_policy(stripped, pol)
        assert sum(mask) == sum(t >= p.ordinary_hi for t in pair.reader.tokens)


def test_workload_deterministic_and_round_trip(tmp_path):
    p = WorkloadParams(num_pairs=4, prompt_len=64, shared_span_len=20, shared_span_offset_jitter=10,
                       vocab_size=128, seed=9)
    a, b = io.StringIO(), io.StringIO()
    assert write_workload(gen_workload(p), a) == 8
    write_workload(gen_workload(p), b)
    assert a.getvalue() == b.getvalue()
    path = tmp_path / "w.jsonl"
    path.write_text(a.getvalue())
    assert read_workload(path) == gen_workload(p)


def test_read_workload_errors(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"request_id": "x"}\n')
    with pytest.raises(ValueError):
        read_workload(path)
    path.write_text('{"request_id":"a","user_id":"u","tokens":[1],"region_labels":["user"],"pair":0,"role":"writer"}\n')
    with pytest.raises(ValueError):
        read_workload(path)
