"""Serving-loop simulation with a TTFT cost model.

For every writer/reader pair the writer is detected, annotated with its
synthetic attention and inserted into the pool; the reader is then matched
under each sharing policy against the same pool state and scored.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from ..annotator import AnnotatorConfig, WorkStats, annotate_request, recompute_count
from ..detector import DetectionPolicy, PerturbParams, apply_policy, perturb_mask
from ..pool import InsertKind, KVPool, PoolConfig
from ..retriever import (
    Assignment,
    MatchPlan,
    SharingMode,
    SharingPolicy,
    match_request,
)
from .attention import AttentionGenParams, gen_attention, region_blocks
from .workload import WorkloadPair


@dataclass(frozen=True)
class CostModel:
    """Affine TTFT proxy; the constants are arbitrary, only ratios and trends matter."""

    c_base: float = 20.0
    c_compute: float = 0.5
    c_reuse: float = 0.02
    # Add the measured wall-clock retrieval time to ttft. Off by default so that
    # simulated latencies are deterministic.
    include_retrieval: bool = False

    def __post_init__(self) -> None:
        if min(self.c_base, self.c_compute, self.c_reuse) < 0:
            raise ValueError("cost constants must be non-negative")
        if not self.c_reuse < self.c_compute:
            raise ValueError("c_reuse must be smaller than c_compute")

    def ttft(self, n: int, covered: int, recompute: int, retrieval_ms: float = 0.0) -> float:
        fresh = (n - covered) + recompute
        t = self.c_base + self.c_compute * fresh + self.c_reuse * (covered - recompute)
        if self.include_retrieval:
            t += retrieval_ms
        return t


@dataclass(frozen=True)
class RequestMetrics:
    policy: str
    request_id: str
    n: int
    match_rate: float
    recompute_rate: float
    ttft_sim_ms: float
    retrieval_ms: float
    segments_used: int
    segment_lengths: tuple[int, ...]
    candidates: int

    CSV_COLUMNS = (
        "policy",
        "request_id",
        "match_rate",
        "recompute_rate",
        "ttft_sim_ms",
        "retrieval_ms",
        "segments_used",
    )

    def row(self) -> dict:
        return {
            "policy": self.policy,
            "request_id": self.request_id,
            "match_rate": f"{self.match_rate:.6f}",
            "recompute_rate": f"{self.recompute_rate:.6f}",
            "ttft_sim_ms": f"{self.ttft_sim_ms:.6f}",
            "retrieval_ms": f"{self.retrieval_ms:.6f}",
            "segments_used": self.segments_used,
        }


@dataclass(frozen=True)
class PolicySummary:
    policy: str
    requests: int
    hit_rate: float
    mean_match_rate: float
    mean_recompute_rate: float
    mean_ttft_ms: float
    p50_ttft_ms: float
    p95_ttft_ms: float
    mean_candidates: float
    segment_length_histogram: dict[int, int]

    @property
    def mean_segment_len(self) -> float:
        total = sum(self.segment_length_histogram.values())
        if not total:
            return 0.0
        return sum(k * v for k, v in self.segment_length_histogram.items()) / total


@dataclass
class ServingResult:
    requests: list[RequestMetrics] = field(default_factory=list)
    summaries: dict[str, PolicySummary] = field(default_factory=dict)
    # writer-side bookkeeping
    stored_segments: int = 0
    derived_tokens: int = 0
    derived_segment_lengths: list[int] = field(default_factory=list)
    insert_kinds: dict[str, int] = field(default_factory=dict)
    pool_tokens: int = 0
    annotator_candidates: int = 0

    def for_policy(self, name: str) -> list[RequestMetrics]:
        return [m for m in self.requests if m.policy == name]

    def write_csv(self, fh: IO[str]) -> None:
        writer = csv.DictWriter(fh, fieldnames=RequestMetrics.CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for m in self.requests:
            writer.writerow(m.row())


def cap_plan(plan: MatchPlan, fraction: float) -> MatchPlan:
    """Serve only the first ``floor(fraction * covered)`` reused tokens of ``plan``.

    A truncated assignment keeps its own recompute rate: the kept prefix gets
    ``ceil(rate * kept)`` recompute positions, taken from the segment's own
    marks first and then from the earliest kept tokens.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("reuse fraction must lie in [0, 1]")
    if fraction >= 1.0:
        return plan
    budget = math.floor(fraction * plan.covered + 1e-9)
    kept: list[Assignment] = []
    positions: set[int] = set()
    recompute: set[int] = set()
    for a in sorted(plan.assignments, key=lambda a: a.offset):
        if budget <= 0:
            break
        take = min(a.length, budget)
        kept.append(a._replace(length=take))
        span = range(a.offset, a.offset + take)
        positions.update(span)
        marked = sorted(p for p in range(a.offset, a.offset + a.length) if p in plan.recompute_positions)
        target = recompute_count(take, len(marked) / a.length)
        chosen = [p for p in marked if p < a.offset + take][:target]
        chosen += [p for p in span if p not in plan.recompute_positions][: target - len(chosen)]
        recompute.update(chosen)
        budget -= take
    return MatchPlan(
        request_id=plan.request_id,
        n=plan.n,
        assignments=kept,
        recompute_positions=frozenset(recompute),
        uncovered_positions=frozenset(range(1, plan.n + 1)) - positions,
        candidates=plan.candidates,
        hash_steps=plan.hash_steps,
    )


def _percentile(xs: Sequence[float], q: float) -> float:
    return float(np.percentile(np.asarray(xs, dtype=np.float64), q)) if xs else 0.0


def summarize(name: str, rows: Sequence[RequestMetrics]) -> PolicySummary:
    ttft = [r.ttft_sim_ms for r in rows]
    hist: dict[int, int] = {}
    for r in rows:
        for length in r.segment_lengths:
            hist[length] = hist.get(length, 0) + 1
    k = len(rows)
    return PolicySummary(
        policy=name,
        requests=k,
        hit_rate=sum(r.match_rate > 0 for r in rows) / k if k else 0.0,
        mean_match_rate=float(np.mean([r.match_rate for r in rows])) if k else 0.0,
        mean_recompute_rate=float(np.mean([r.recompute_rate for r in rows])) if k else 0.0,
        mean_ttft_ms=float(np.mean(ttft)) if k else 0.0,
        p50_ttft_ms=_percentile(ttft, 50),
        p95_ttft_ms=_percentile(ttft, 95),
        mean_candidates=float(np.mean([r.candidates for r in rows])) if k else 0.0,
        segment_length_histogram=dict(sorted(hist.items())),
    )


@dataclass(frozen=True)
class ServingConfig:
    annotator: AnnotatorConfig = field(default_factory=AnnotatorConfig)
    pool: PoolConfig = field(default_factory=lambda: PoolConfig(capacity_tokens=1 << 20))
    attention: AttentionGenParams = field(default_factory=AttentionGenParams)
    cost: CostModel = field(default_factory=CostModel)
    fn_rate: float = 0.0
    fp_rate: float = 0.0
    perturb_seed: int = 0
    reuse_fraction: float = 1.0
    measure_retrieval: bool = False

    def __post_init__(self) -> None:
        if self.pool.window_len != self.annotator.min_segment_len:
            raise ValueError(
                f"window_len ({self.pool.window_len}) must equal "
                f"min_segment_len ({self.annotator.min_segment_len})"
            )
        if not 0.0 <= self.reuse_fraction <= 1.0:
            raise ValueError("reuse_fraction must lie in [0, 1]")
        PerturbParams(self.fn_rate, self.fp_rate)  # range check


def writer_mask(pair_index: int, req, detection: DetectionPolicy, cfg: ServingConfig):
    mask = apply_policy(req, detection)
    if cfg.fn_rate or cfg.fp_rate:
        mask = perturb_mask(
            mask, PerturbParams(cfg.fn_rate, cfg.fp_rate, (cfg.perturb_seed, pair_index, 0))
        )
    return mask


def run_serving(
    pairs: Iterable[WorkloadPair],
    policies: Sequence[SharingPolicy],
    detection: DetectionPolicy,
    cfg: ServingConfig,
    pool: KVPool | None = None,
) -> ServingResult:
    """Serve every pair in order and score readers under each policy."""
    policies = [SharingPolicy.parse(p) for p in policies]
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate policies: {names}")
    pool = pool if pool is not None else KVPool(cfg.pool)
    if pool.window_len != cfg.annotator.min_segment_len:
        raise ValueError("pool window_len must equal min_segment_len")
    result = ServingResult()
    clock = 0
    for k, pair in enumerate(pairs):
        w = pair.writer
        wmask = writer_mask(k, w, detection, cfg)
        att = AttentionGenParams(
            lambda_decay=cfg.attention.lambda_decay,
            self_weight=cfg.attention.self_weight,
            block_spans=region_blocks(w.region_labels),
            block_boost=cfg.attention.block_boost,
            noise=cfg.attention.noise,
            seed=int(np.random.SeedSequence([cfg.attention.seed, k]).generate_state(1)[0]),
        )
        A = gen_attention(len(w.tokens), att)
        astats = WorkStats()
        segments = annotate_request(w, wmask, A, cfg.annotator, pool.params, astats)
        result.annotator_candidates += astats.candidates
        for seg in segments:
            clock += 1
            outcome = pool.insert(seg, clock)
            result.derived_tokens += len(seg)
            result.derived_segment_lengths.append(len(seg))
            key = outcome.kind.value
            result.insert_kinds[key] = result.insert_kinds.get(key, 0) + 1
        pool.record_request(w, wmask)

        r = pair.reader
        rmask = apply_policy(r, detection)
        clock += 1
        for policy in policies:
            t0 = time.perf_counter() if cfg.measure_retrieval else 0.0
            plan = match_request(r, rmask, pool, policy)
            retrieval_ms = (time.perf_counter() - t0) * 1e3 if cfg.measure_retrieval else 0.0
            plan = cap_plan(plan, cfg.reuse_fraction)
            if policy.mode is SharingMode.CROSS_USER_SELECTIVE:
                for a in plan.assignments:
                    if a.entry_id is not None:
                        pool.touch(a.entry_id, clock)
            rec = len(plan.recompute_positions)
            result.requests.append(
                RequestMetrics(
                    policy=policy.name,
                    request_id=r.request_id,
                    n=plan.n,
                    match_rate=plan.match_rate,
                    recompute_rate=plan.recompute_rate,
                    ttft_sim_ms=cfg.cost.ttft(plan.n, plan.covered, rec, retrieval_ms),
                    retrieval_ms=retrieval_ms,
                    segments_used=len(plan.assignments),
                    segment_lengths=tuple(plan.segment_lengths()),
                    candidates=plan.candidates,
                )
            )
    result.stored_segments = len(pool)
    result.pool_tokens = pool.total_tokens
    for name in names:
        result.summaries[name] = summarize(name, result.for_policy(name))
    return result


__all__ = [
    "CostModel",
    "InsertKind",
    "PolicySummary",
    "RequestMetrics",
    "ServingConfig",
    "ServingResult",
    "cap_plan",
    "run_serving",
    "summarize",
    "writer_mask",
]
