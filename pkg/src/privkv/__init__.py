"""Privacy-aware, token-granular KV-cache sharing with a simulation harness."""
from __future__ import annotations

from .annotator import AnnotatorConfig, ReusableSegment, WorkStats, annotate_request
from .core import CoarseSegment, Request, SegmentSpan, coarse_segments
from .detector import DetectionPolicy, PerturbParams, PolicyKind, apply_policy, perturb_mask
from .hashing import HashParams, digest, hash_tokens
from .pool import InsertKind, KVPool, PoolConfig
from .retriever import MatchPlan, SharingMode, SharingPolicy, match_request, reuse_oracle
from .sat import SummedAreaTable, build_in_place

__version__ = "0.1.0"

__all__ = [
    "AnnotatorConfig",
    "CoarseSegment",
    "DetectionPolicy",
    "HashParams",
    "InsertKind",
    "KVPool",
    "MatchPlan",
    "PerturbParams",
    "PolicyKind",
    "PoolConfig",
    "Request",
    "ReusableSegment",
    "SegmentSpan",
    "SharingMode",
    "SharingPolicy",
    "SummedAreaTable",
    "WorkStats",
    "annotate_request",
    "apply_policy",
    "build_in_place",
    "coarse_segments",
    "digest",
    "hash_tokens",
    "match_request",
    "perturb_mask",
    "reuse_oracle",
]
