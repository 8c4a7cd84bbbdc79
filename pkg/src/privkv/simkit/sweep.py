"""One-axis parameter sweeps over the serving simulation (and optionally the attack)."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import IO, Any, Sequence

from ..annotator import AnnotatorConfig
from ..detector import DetectionPolicy, PolicyKind
from ..pool import PoolConfig
from ..retriever import SharingMode, SharingPolicy
from .attack import run_attack
from .serving import ServingConfig, ServingResult, run_serving
from .workload import WorkloadParams, gen_workload

AXES = (
    "match_rate",
    "recompute_rate",
    "segment_min_len",
    "privacy_level",
    "fn_rate",
    "fp_rate",
    "chunk_size",
)

CSV_COLUMNS = (
    "axis",
    "value",
    "policy",
    "requests",
    "hit_rate",
    "mean_match_rate",
    "mean_recompute_rate",
    "mean_ttft_ms",
    "p50_ttft_ms",
    "p95_ttft_ms",
    "mean_candidates",
    "stored_segments",
    "derived_tokens",
    "mean_segment_len",
    "pool_tokens",
    "direct_recovery_rate",
)


@dataclass(frozen=True)
class AttackSettings:
    max_vocab: int = 64
    max_prompt_len: int = 256
    max_group: int = 2
    budget: int | None = None
    # Also run the attack at fn_rate / fp_rate sweep points.
    in_sweeps: bool = False


@dataclass(frozen=True)
class SweepSetup:
    workload: WorkloadParams
    serving: ServingConfig
    detection: DetectionPolicy
    policies: tuple[SharingPolicy, ...] = (
        SharingPolicy(SharingMode.NO_SHARING),
        SharingPolicy(SharingMode.CROSS_USER_SELECTIVE),
    )
    attack: AttackSettings | None = None


def point_setup(setup: SweepSetup, axis: str, value: Any) -> SweepSetup:
    """The setup for one grid point: ``setup`` with ``axis`` set to ``value``."""
    s = setup.serving
    if axis == "match_rate":
        return dataclasses.replace(setup, serving=dataclasses.replace(s, reuse_fraction=float(value)))
    if axis == "recompute_rate":
        ann = dataclasses.replace(s.annotator, rho=float(value))
        return dataclasses.replace(setup, serving=dataclasses.replace(s, annotator=ann))
    if axis == "segment_min_len":
        m = int(value)
        ann = AnnotatorConfig(min_segment_len=m, rho=s.annotator.rho)
        pool = PoolConfig(max(s.pool.capacity_tokens, m), window_len=m, hash_seed=s.pool.hash_seed)
        return dataclasses.replace(setup, serving=dataclasses.replace(s, annotator=ann, pool=pool))
    if axis == "privacy_level":
        if setup.detection.kind is not PolicyKind.DICTIONARY:
            raise ValueError("privacy_level sweeps need a dictionary detection policy")
        return dataclasses.replace(setup, detection=setup.detection.with_level(str(value)))
    if axis == "fn_rate":
        return dataclasses.replace(setup, serving=dataclasses.replace(s, fn_rate=float(value)))
    if axis == "fp_rate":
        return dataclasses.replace(setup, serving=dataclasses.replace(s, fp_rate=float(value)))
    if axis == "chunk_size":
        c = int(value)
        pols = [
            SharingPolicy(p.mode, c) if p.mode is SharingMode.FIXED_CHUNK else p
            for p in setup.policies
        ]
        if not any(p.mode is SharingMode.FIXED_CHUNK for p in pols):
            pols.append(SharingPolicy(SharingMode.FIXED_CHUNK, c))
        return dataclasses.replace(setup, policies=tuple(pols))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {', '.join(AXES)}")


class ScaleGuardError(ValueError):
    """The requested attack is too large for exhaustive desk-scale probing."""


def check_attack_scale(workload: WorkloadParams, settings: AttackSettings) -> None:
    if workload.vocab_size > settings.max_vocab:
        raise ScaleGuardError(
            f"vocab_size {workload.vocab_size} exceeds attack max_vocab {settings.max_vocab}"
        )
    if workload.prompt_len > settings.max_prompt_len:
        raise ScaleGuardError(
            f"prompt_len {workload.prompt_len} exceeds attack max_prompt_len {settings.max_prompt_len}"
        )


def _rows(axis: str, value: Any, result: ServingResult, recovery: float | None) -> list[dict]:
    lengths = result.derived_segment_lengths
    mean_len = sum(lengths) / len(lengths) if lengths else 0.0
    rows = []
    for name, s in result.summaries.items():
        rows.append(
            {
                "axis": axis,
                "value": value,
                "policy": name,
                "requests": s.requests,
                "hit_rate": s.hit_rate,
                "mean_match_rate": s.mean_match_rate,
                "mean_recompute_rate": s.mean_recompute_rate,
                "mean_ttft_ms": s.mean_ttft_ms,
                "p50_ttft_ms": s.p50_ttft_ms,
                "p95_ttft_ms": s.p95_ttft_ms,
                "mean_candidates": s.mean_candidates,
                "stored_segments": result.stored_segments,
                "derived_tokens": result.derived_tokens,
                "mean_segment_len": mean_len,
                "pool_tokens": result.pool_tokens,
                "direct_recovery_rate": "" if recovery is None else recovery,
            }
        )
    return rows


def sweep(setup: SweepSetup, axis: str, grid: Sequence[Any]) -> list[dict]:
    """Run one serving simulation per grid point on the same seeded workload."""
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {', '.join(AXES)}")
    if not grid:
        raise ValueError("empty grid")
    pairs = gen_workload(setup.workload)
    attack = setup.attack
    if attack is None or not attack.in_sweeps or axis not in ("fn_rate", "fp_rate"):
        attack = None
    if attack is not None:
        check_attack_scale(setup.workload, attack)
    rows: list[dict] = []
    for value in grid:
        pt = point_setup(setup, axis, value)
        result = run_serving(pairs, pt.policies, pt.detection, pt.serving)
        recovery = None
        if attack is not None:
            vocab = list(range(1, setup.workload.vocab_size))
            rep = run_attack(pairs, pt.detection, pt.serving, vocab, attack.budget, attack.max_group)
            recovery = rep.direct_recovery_rate
        rows.extend(_rows(axis, value, result, recovery))
    return rows


def _fmt(v: Any) -> Any:
    return f"{v:.6f}" if isinstance(v, float) else v


def write_csv(rows: Sequence[dict], fh: IO[str]) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row[k]) for k in CSV_COLUMNS})
