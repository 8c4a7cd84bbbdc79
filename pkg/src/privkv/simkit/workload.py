"""Writer/reader request pairs with a shared public span and planted secrets.

Each pair models one reuse opportunity: the writer is served first and
populates the pool, then the reader arrives. Both carry the same public span,
possibly at shifted offsets; ground-truth sensitive positions in user regions
hold different random tokens in the two requests.

Token id layout for vocabulary size ``V`` and category size ``C``::

    0                 reserved (out of vocabulary, never generated)
    [1, V-3C)         ordinary tokens
    [V-3C, V-2C)      personal_core category
    [V-2C, V-C)       personal_extended category
    [V-C, V)          non_personal category
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from ..core import Request, SensitivityMask
from ..detector import (
    NON_PERSONAL,
    PERSONAL_CORE,
    PERSONAL_EXTENDED,
    DetectionPolicy,
    PolicyKind,
)


@dataclass(frozen=True)
class WorkloadParams:
    num_pairs: int = 8
    prompt_len: int = 1024
    shared_span_len: int = 512
    shared_span_offset_jitter: int = 0
    shift_min: int = 0
    sensitive_density: float = 0.05
    category_density: float = 0.0
    vocab_size: int = 4096
    category_size: int | None = None
    system_len: int = 0
    attach_ground_truth: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_pairs < 0 or self.prompt_len < 1:
            raise ValueError("num_pairs must be >= 0 and prompt_len >= 1")
        for name in ("sensitive_density", "category_density"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.shared_span_len < 0 or self.system_len < 0:
            raise ValueError("span lengths must be non-negative")
        if self.system_len + self.shared_span_len > self.prompt_len:
            raise ValueError("system prompt plus shared span do not fit in prompt_len")
        if not 0 <= self.shift_min <= max(self.shared_span_offset_jitter, 0):
            raise ValueError("shift_min must lie in [0, shared_span_offset_jitter]")
        if self.shared_span_offset_jitter > self.max_shift:
            raise ValueError(
                f"offset jitter {self.shared_span_offset_jitter} exceeds the free room "
                f"after the shared span ({self.max_shift})"
            )
        if self.ordinary_hi <= 2:
            raise ValueError("vocab_size too small for the category layout")

    @property
    def cat_size(self) -> int:
        return self.category_size or max(2, self.vocab_size // 16)

    @property
    def ordinary_hi(self) -> int:
        return self.vocab_size - 3 * self.cat_size

    @property
    def lead(self) -> int:
        return (self.prompt_len - self.system_len - self.shared_span_len) // 2

    @property
    def max_shift(self) -> int:
        return self.prompt_len - self.system_len - self.shared_span_len - self.lead


@dataclass(frozen=True)
class WorkloadPair:
    writer: Request
    reader: Request
    writer_truth: SensitivityMask
    reader_truth: SensitivityMask
    shift: int = 0


def category_sets(params: WorkloadParams) -> dict[str, frozenset[int]]:
    c, base = params.cat_size, params.ordinary_hi
    return {
        PERSONAL_CORE: frozenset(range(base, base + c)),
        PERSONAL_EXTENDED: frozenset(range(base + c, base + 2 * c)),
        NON_PERSONAL: frozenset(range(base + 2 * c, base + 3 * c)),
    }


def default_dictionary_policy(params: WorkloadParams, level: str = "medium") -> DetectionPolicy:
    return DetectionPolicy(PolicyKind.DICTIONARY, categories=category_sets(params), level=level)


def _pair(params: WorkloadParams, k: int, system: np.ndarray) -> WorkloadPair:
    rng = np.random.default_rng([params.seed, k])
    n, sys_len, span = params.prompt_len, params.system_len, params.shared_span_len
    lead = params.lead
    tail = n - sys_len - span - lead
    cat_lo, V = params.ordinary_hi, params.vocab_size

    def ordinary(size: int) -> np.ndarray:
        return rng.integers(1, cat_lo, size=size)

    body = ordinary(n - sys_len)
    labels = ["user"] * lead + ["public"] * span + ["user"] * tail
    # non-sensitive category hits (dates, places...) shared by writer and reader
    cat_hit = rng.random(n - sys_len) < params.category_density
    body[cat_hit] = rng.integers(cat_lo, V, size=int(cat_hit.sum()))
    user = np.array([lab == "user" for lab in labels], dtype=bool)
    secret = user & (rng.random(n - sys_len) < params.sensitive_density)
    reader_body = body.copy()
    reader_body[secret] = rng.integers(cat_lo, V, size=int(secret.sum()))
    writer_body = reader_body.copy()
    # substitutes: same category layout, always a different token
    subs = rng.integers(cat_lo, V - 1, size=int(secret.sum()))
    subs = np.where(subs >= reader_body[secret], subs + 1, subs)
    writer_body[secret] = subs

    hi = params.shared_span_offset_jitter
    shift = int(rng.integers(params.shift_min, hi + 1)) if hi > 0 else 0
    inserted = ordinary(shift)
    writer_body = np.concatenate([inserted, writer_body])[: n - sys_len]
    writer_labels = (["user"] * shift + labels)[: n - sys_len]
    writer_secret = np.concatenate([np.zeros(shift, dtype=bool), secret])[: n - sys_len]

    sys_tokens = [int(t) for t in system]
    sys_labels = ["system"] * sys_len
    reader_truth = (0,) * sys_len + tuple(int(b) for b in secret)
    writer_truth = (0,) * sys_len + tuple(int(b) for b in writer_secret)
    gt = params.attach_ground_truth
    writer = Request(
        f"p{k}-w",
        f"user-w{k}",
        tuple(sys_tokens + [int(t) for t in writer_body]),
        tuple(sys_labels + writer_labels),
        writer_truth if gt else None,
    )
    reader = Request(
        f"p{k}-r",
        f"user-r{k}",
        tuple(sys_tokens + [int(t) for t in reader_body]),
        tuple(sys_labels + labels),
        reader_truth if gt else None,
    )
    return WorkloadPair(writer, reader, writer_truth, reader_truth, shift)


_SYSTEM_STREAM = 0xFFFFFFFF


def gen_workload(params: WorkloadParams) -> list[WorkloadPair]:
    system = np.random.default_rng([params.seed, _SYSTEM_STREAM]).integers(
        1, params.ordinary_hi, size=params.system_len
    )
    return [_pair(params, k, system) for k in range(params.num_pairs)]


# -- JSONL -------------------------------------------------------------------


def _line(req: Request, truth: SensitivityMask, pair: int, role: str, shift: int) -> str:
    row = {
        "request_id": req.request_id,
        "user_id": req.user_id,
        "tokens": list(req.tokens),
        "region_labels": list(req.region_labels),
    }
    if req.mask_override is not None:
        row["mask_override"] = list(req.mask_override)
    row["ground_truth"] = list(truth)
    row["pair"] = pair
    row["role"] = role
    row["shift"] = shift
    return json.dumps(row, separators=(",", ":"))


def write_workload(pairs: Iterable[WorkloadPair], fh: IO[str]) -> int:
    lines = 0
    for k, p in enumerate(pairs):
        fh.write(_line(p.writer, p.writer_truth, k, "writer", p.shift) + "\n")
        fh.write(_line(p.reader, p.reader_truth, k, "reader", p.shift) + "\n")
        lines += 2
    return lines


def request_from_dict(row: dict) -> Request:
    return Request(
        request_id=str(row["request_id"]),
        user_id=str(row["user_id"]),
        tokens=tuple(row["tokens"]),
        region_labels=tuple(row["region_labels"]),
        mask_override=tuple(row["mask_override"]) if "mask_override" in row else None,
    )


def read_workload(path: str | Path) -> list[WorkloadPair]:
    by_pair: dict[int, dict[str, tuple[Request, SensitivityMask, int]]] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
                req = request_from_dict(row)
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad workload line: {exc}") from exc
            truth = tuple(row.get("ground_truth", (0,) * len(req.tokens)))
            by_pair.setdefault(int(row.get("pair", lineno)), {})[row.get("role", "reader")] = (
                req,
                truth,
                int(row.get("shift", 0)),
            )
    pairs = []
    for k in sorted(by_pair):
        roles = by_pair[k]
        if set(roles) != {"writer", "reader"}:
            raise ValueError(f"{path}: pair {k} needs exactly one writer and one reader")
        (w, wt, shift), (r, rt, _) = roles["writer"], roles["reader"]
        pairs.append(WorkloadPair(w, r, wt, rt, shift))
    return pairs
