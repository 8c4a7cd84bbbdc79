"""Derive reusable segments from attention under a sensitivity mask.

Per coarse segment, the annotator picks the single substring that maximizes
intra-attention minus inter-attention (all queries O(1) through the
summed-area table), then flags the tokens that lean hardest on outside context
for recomputation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import CoarseSegment, Request, SegmentSpan, TokenSeq, coarse_segments
from .hashing import HashParams, digest, hash_tokens
from .sat import SummedAreaTable, build_in_place, check_attention

# Scores closer than this are treated as ties; a span must beat this to count as positive.
SCORE_TOL = 1e-9


@dataclass(frozen=True)
class AnnotatorConfig:
    min_segment_len: int = 128
    rho: float = 0.25

    def __post_init__(self) -> None:
        if self.min_segment_len < 1:
            raise ValueError("min_segment_len must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")


@dataclass
class WorkStats:
    """Counters for structural work, used by the scaling checks."""

    candidates: int = 0
    hash_steps: int = 0
    verifications: int = 0


@dataclass(frozen=True)
class ReusableSegment:
    tokens: TokenSeq
    recompute_mask: tuple[int, ...]
    origin: tuple[str, int, int]
    prefix_hash: int
    full_hash: int
    digest: bytes
    score: float
    window_len: int
    # Sensitivity bits of the origin span at construction time; all zero by construction.
    span_mask: tuple[int, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.tokens)


def recompute_count(length: int, rho: float) -> int:
    # Small slack keeps e.g. 0.1 * 30 from rounding up to 4.
    return min(length, max(0, math.ceil(rho * length - 1e-9)))


def _row_scores(S: np.ndarray, diag: np.ndarray, l: int, r0: int, b: int) -> np.ndarray:
    """intra - inter for spans ``(l, r)``, ``r = r0..b`` (1-based)."""
    scores = diag[r0 - 1 : b].copy()
    if l >= 2:
        scores -= S[l - 2, r0 - 1 : b]
        scores -= 2.0 * S[r0 - 1 : b, l - 2]
        scores += 2.0 * S[l - 2, l - 2]
    return scores


def select_reusable(
    sat: SummedAreaTable,
    seg: CoarseSegment,
    cfg: AnnotatorConfig,
    stats: WorkStats | None = None,
) -> SegmentSpan | None:
    """Best-scoring span inside ``seg`` of length at least ``min_segment_len``.

    Ties (within ``SCORE_TOL``) go to the longer span, then the leftmost one.
    Returns None when the segment is too short or no span scores positive.
    """
    a, b = seg
    if not 1 <= a <= b <= sat.n:
        raise ValueError(f"segment {seg} outside table of size {sat.n}")
    m = cfg.min_segment_len
    if b - a + 1 < m:
        return None
    S = sat.table
    diag = np.diagonal(S)
    last_l = b - m + 1
    row_max = np.empty(last_l - a + 1)
    for l in range(a, last_l + 1):
        scores = _row_scores(S, diag, l, l + m - 1, b)
        row_max[l - a] = scores.max()
        if stats is not None:
            stats.candidates += scores.size
    best = float(row_max.max())
    if best <= SCORE_TOL:
        return None

    threshold = max(best - SCORE_TOL, SCORE_TOL)
    chosen: tuple[int, int, float] | None = None  # (length, l, score)
    for l in np.flatnonzero(row_max >= threshold) + a:
        l = int(l)
        r0 = l + m - 1
        scores = _row_scores(S, diag, l, r0, b)
        if stats is not None:
            stats.candidates += scores.size
        hits = np.flatnonzero((scores >= threshold) & (scores > SCORE_TOL))
        if hits.size == 0:
            continue
        k = int(hits[-1])
        length = k + m
        # Rows are visited left to right, so only a strictly longer span wins.
        if chosen is None or length > chosen[0]:
            chosen = (length, l, float(scores[k]))
    assert chosen is not None
    length, l, score = chosen
    return SegmentSpan(l, l + length - 1, score)


def _table_at(S: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Vectorised 1-based ``T[i, j]`` with zero for indices below 1."""
    ok = (i >= 1) & (j >= 1)
    out = np.zeros(i.shape, dtype=np.float64)
    out[ok] = S[i[ok] - 1, j[ok] - 1]
    return out


def token_dependence(sat: SummedAreaTable, span: SegmentSpan) -> np.ndarray:
    """Per-token inter minus intra attention for the tokens of ``span``.

    Inter covers columns before ``span.l``; intra covers ``[span.l, i]``.
    """
    S = sat.table
    l, r = span.l, span.r
    i = np.arange(l, r + 1)
    lm1 = np.full_like(i, l - 1)
    t_i_lm1 = _table_at(S, i, lm1)
    t_im1_lm1 = _table_at(S, i - 1, lm1)
    inter = t_i_lm1 - t_im1_lm1
    intra = _table_at(S, i, i) - _table_at(S, i - 1, i) - t_i_lm1 + t_im1_lm1
    return inter - intra


def mark_recompute(
    sat: SummedAreaTable, span: SegmentSpan, cfg: AnnotatorConfig
) -> tuple[int, ...]:
    """Recompute mask over the span: the ``ceil(rho*len)`` most outward-looking tokens.

    Scores are compared after rounding to 9 decimals so that float noise
    cannot break a tie; tied tokens are taken in index order.
    """
    length = span.r - span.l + 1
    k = recompute_count(length, cfg.rho)
    mask = np.zeros(length, dtype=np.int64)
    if k:
        dep = np.round(token_dependence(sat, span), 9)
        order = np.argsort(-dep, kind="stable")
        mask[order[:k]] = 1
    return tuple(int(x) for x in mask)


def make_segment(
    tokens: Sequence[int],
    span: SegmentSpan,
    recompute: Sequence[int],
    request_id: str,
    params: HashParams,
    window_len: int,
    span_mask: Sequence[int],
) -> ReusableSegment:
    seg_tokens = tuple(tokens[span.l - 1 : span.r])
    return ReusableSegment(
        tokens=seg_tokens,
        recompute_mask=tuple(recompute),
        origin=(request_id, span.l, span.r),
        prefix_hash=hash_tokens(seg_tokens[:window_len], params),
        full_hash=hash_tokens(seg_tokens, params),
        digest=digest(seg_tokens),
        score=span.score,
        window_len=window_len,
        span_mask=tuple(span_mask),
    )


def annotate_request(
    req: Request,
    mask: Sequence[int],
    A: np.ndarray,
    cfg: AnnotatorConfig,
    params: HashParams,
    stats: WorkStats | None = None,
) -> list[ReusableSegment]:
    """Reusable segments of one request; ``A`` is overwritten by its summed-area table."""
    n = len(req.tokens)
    if len(mask) != n:
        raise ValueError(f"mask length {len(mask)} does not match request length {n}")
    if A.shape != (n, n):
        raise ValueError(f"attention shape {A.shape} does not match request length {n}")
    check_attention(A)
    sat = build_in_place(A)
    out: list[ReusableSegment] = []
    for seg in coarse_segments(req.tokens, mask):
        span = select_reusable(sat, seg, cfg, stats)
        if span is None:
            continue
        recompute = mark_recompute(sat, span, cfg)
        out.append(
            make_segment(
                req.tokens,
                span,
                recompute,
                req.request_id,
                params,
                cfg.min_segment_len,
                mask[span.l - 1 : span.r],
            )
        )
    return out
