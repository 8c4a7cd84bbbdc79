from __future__ import annotations

from privkv.annotator import ReusableSegment, make_segment
from privkv.core import SegmentSpan
from privkv.hashing import HashParams


def seg(tokens, params: HashParams, w: int, recompute=None, origin="s") -> ReusableSegment:
    tokens = tuple(tokens)
    n = len(tokens)
    rec = tuple(recompute) if recompute is not None else (0,) * n
    return make_segment(tokens, SegmentSpan(1, n, 1.0), rec, origin, params, w, (0,) * n)
