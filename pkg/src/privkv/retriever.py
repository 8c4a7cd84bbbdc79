"""Two-phase segment retrieval and per-request match plans.

Phase one slides a ``window_len`` rolling hash over the request and looks each
window up in the pool's prefix index. Phase two checks every candidate with
an O(1) substring hash against the stored full hash, then with SHA-256.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, NamedTuple, Sequence

from .annotator import ReusableSegment, WorkStats
from .core import Request
from .hashing import HashParams, PrefixHashes, digest, prefix_hash_array

if TYPE_CHECKING:
    from .pool import KVPool


class SharingMode(str, enum.Enum):
    NO_SHARING = "no_sharing"
    SAME_USER_FULL = "same_user_full"
    CROSS_USER_SELECTIVE = "cross_user_selective"
    FIXED_CHUNK = "fixed_chunk"
    PREFIX_ONLY = "prefix_only"


@dataclass(frozen=True)
class SharingPolicy:
    mode: SharingMode
    chunk_len: int = 128

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", SharingMode(self.mode))
        if self.chunk_len < 1:
            raise ValueError("chunk_len must be >= 1")

    @property
    def name(self) -> str:
        if self.mode is SharingMode.FIXED_CHUNK:
            return f"fixed_chunk_{self.chunk_len}"
        return self.mode.value

    @classmethod
    def parse(cls, spec: str | dict[str, Any] | "SharingPolicy") -> "SharingPolicy":
        """Accept ``"cross_user_selective"``, ``"fixed_chunk:64"`` or ``{"mode": ..., "chunk_len": ...}``."""
        if isinstance(spec, SharingPolicy):
            return spec
        if isinstance(spec, dict):
            return cls(SharingMode(spec["mode"]), int(spec.get("chunk_len", 128)))
        mode, _, arg = str(spec).partition(":")
        if arg:
            return cls(SharingMode(mode), int(arg))
        return cls(SharingMode(mode))


NO_SHARING = SharingPolicy(SharingMode.NO_SHARING)
SAME_USER_FULL = SharingPolicy(SharingMode.SAME_USER_FULL)
CROSS_USER_SELECTIVE = SharingPolicy(SharingMode.CROSS_USER_SELECTIVE)
PREFIX_ONLY = SharingPolicy(SharingMode.PREFIX_ONLY)


class Assignment(NamedTuple):
    """``length`` request tokens starting at 1-based ``offset`` served from ``source``."""

    entry_id: int | None
    offset: int
    length: int
    source: str


@dataclass
class MatchPlan:
    request_id: str
    n: int
    assignments: list[Assignment]
    recompute_positions: frozenset[int]
    uncovered_positions: frozenset[int]
    candidates: int = 0
    hash_steps: int = 0
    stats: dict[str, float] = field(init=False)

    def __post_init__(self) -> None:
        covered = self.n - len(self.uncovered_positions)
        self.stats = {
            "match_rate": covered / self.n if self.n else 0.0,
            "recompute_rate": len(self.recompute_positions) / covered if covered else 0.0,
        }

    @property
    def match_rate(self) -> float:
        return self.stats["match_rate"]

    @property
    def recompute_rate(self) -> float:
        return self.stats["recompute_rate"]

    @property
    def covered(self) -> int:
        return self.n - len(self.uncovered_positions)

    def covered_positions(self) -> set[int]:
        return set(range(1, self.n + 1)) - self.uncovered_positions

    def segment_lengths(self) -> list[int]:
        return [a.length for a in self.assignments]

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "n": self.n,
            "assignments": [a._asdict() for a in self.assignments],
            "recompute_positions": sorted(self.recompute_positions),
            "uncovered_positions": sorted(self.uncovered_positions),
            "match_rate": self.match_rate,
            "recompute_rate": self.recompute_rate,
            "candidates": self.candidates,
            "hash_steps": self.hash_steps,
        }


def window_scan(
    tokens: Sequence[int], w: int, params: HashParams, stats: WorkStats | None = None
):
    """Yield ``(offset, hash)`` for every length-``w`` window, rolling in O(1) per shift."""
    n = len(tokens)
    if w < 1 or n < w:
        return
    p, base = params.modulus, params.base
    top = params.power(w - 1)
    h = 0
    for t in tokens[:w]:
        h = (h * base + t + 1) % p
    if stats is not None:
        # w folds for the first window plus one roll per later window: n steps in total.
        stats.hash_steps += n
    yield 1, h
    for k in range(w, n):
        # Same update as hashing.roll_window, inlined for the hot loop.
        h = ((h - (tokens[k - w] + 1) * top) * base + tokens[k] + 1) % p
        yield k - w + 2, h


def find_candidates(
    tokens: Sequence[int], pool: "KVPool", stats: WorkStats | None = None
) -> list[tuple[int, int]]:
    """``(offset, entry id)`` for every request window whose hash is a stored prefix hash."""
    index = pool.prefix_index
    out: list[tuple[int, int]] = []
    for offset, h in window_scan(tokens, pool.window_len, pool.params, stats):
        ids = index.get(h)
        if ids:
            out.extend((offset, i) for i in sorted(ids))
    if stats is not None:
        stats.candidates += len(out)
    return out


def verify_segment(
    segment: ReusableSegment, offset: int, tokens: Sequence[int], ph: PrefixHashes
) -> bool:
    m = len(segment.tokens)
    end = offset + m - 1
    if offset < 1 or end > len(tokens):
        return False
    if ph.substring_hash(offset, end) != segment.full_hash:
        return False
    return digest(tokens, offset, end) == segment.digest


def verify(
    candidate: tuple[int, int], tokens: Sequence[int], ph: PrefixHashes, pool: "KVPool"
) -> bool:
    """Full-length hash pre-check, then SHA-256 confirmation."""
    offset, entry_id = candidate
    entry = pool.entries.get(entry_id)
    if entry is None:
        return False
    return verify_segment(entry.segment, offset, tokens, ph)


def locate(
    segment: ReusableSegment, text: Sequence[int], params: HashParams
) -> list[int]:
    """Offsets at which ``segment`` occurs in ``text`` (same two phases, one pattern)."""
    hits: list[int] = []
    ph: PrefixHashes | None = None
    for offset, h in window_scan(text, segment.window_len, params):
        if h != segment.prefix_hash:
            continue
        if ph is None:
            ph = prefix_hash_array(text, params)
        if verify_segment(segment, offset, text, ph):
            hits.append(offset)
    return hits


def verified_matches(
    tokens: Sequence[int], pool: "KVPool", stats: WorkStats | None = None
) -> list[tuple[int, int]]:
    cands = find_candidates(tokens, pool, stats)
    if not cands:
        return []
    ph = prefix_hash_array(tokens, pool.params)
    out = [c for c in cands if verify(c, tokens, ph, pool)]
    if stats is not None:
        stats.verifications += len(cands)
    return out


def _plan(
    request_id: str,
    n: int,
    assignments: list[Assignment],
    recompute: set[int],
    stats: WorkStats,
) -> MatchPlan:
    covered: set[int] = set()
    for a in assignments:
        covered.update(range(a.offset, a.offset + a.length))
    uncovered = frozenset(range(1, n + 1)) - covered
    return MatchPlan(
        request_id=request_id,
        n=n,
        assignments=assignments,
        recompute_positions=frozenset(recompute),
        uncovered_positions=uncovered,
        candidates=stats.candidates,
        hash_steps=stats.hash_steps,
    )


def _selective(tokens: Sequence[int], pool: "KVPool", stats: WorkStats):
    matches = verified_matches(tokens, pool, stats)
    lengths = {i: len(pool.entries[i].segment) for _, i in matches}
    matches.sort(key=lambda c: (c[0], -lengths[c[1]], c[1]))
    assignments: list[Assignment] = []
    recompute: set[int] = set()
    last_end = 0
    for offset, entry_id in matches:
        if offset <= last_end:
            continue
        seg = pool.entries[entry_id].segment
        assignments.append(Assignment(entry_id, offset, len(seg), "segment"))
        recompute.update(offset + k for k, bit in enumerate(seg.recompute_mask) if bit)
        last_end = offset + len(seg) - 1
    return assignments, recompute


def _fixed_chunks(tokens: Sequence[int], mask: Sequence[int], pool: "KVPool", c: int):
    assignments: list[Assignment] = []
    for start in range(0, len(tokens) - c + 1, c):
        if any(mask[start : start + c]):
            continue
        if pool.chunks.contains(c, tokens[start : start + c]):
            assignments.append(Assignment(None, start + 1, c, "chunk"))
    return assignments


def match_request(
    request: Request,
    mask: Sequence[int],
    pool: "KVPool",
    policy: SharingPolicy = CROSS_USER_SELECTIVE,
    stats: WorkStats | None = None,
) -> MatchPlan:
    """Assemble the reuse plan for one request under ``policy``.

    Reused positions not flagged for recomputation are served from cache;
    everything else is a zero placeholder for the engine to fill.
    """
    tokens = request.tokens
    n = len(tokens)
    if len(mask) != n:
        raise ValueError(f"mask length {len(mask)} does not match request length {n}")
    local = WorkStats()
    assignments: list[Assignment] = []
    recompute: set[int] = set()
    mode = policy.mode
    if mode is SharingMode.SAME_USER_FULL:
        k = pool.sessions.prefix_len(request.user_id, tokens)
        if k:
            assignments.append(Assignment(None, 1, k, "session"))
    elif mode is SharingMode.CROSS_USER_SELECTIVE:
        assignments, recompute = _selective(tokens, pool, local)
    elif mode is SharingMode.FIXED_CHUNK:
        assignments = _fixed_chunks(tokens, mask, pool, policy.chunk_len)
    elif mode is SharingMode.PREFIX_ONLY:
        k = pool.prefixes.longest(tokens, mask)
        if k:
            assignments.append(Assignment(None, 1, k, "prefix"))
    if stats is not None:
        stats.candidates += local.candidates
        stats.hash_steps += local.hash_steps
        stats.verifications += local.verifications
    return _plan(request.request_id, n, assignments, recompute, local)


def reuse_oracle(
    probe: Request | Sequence[int],
    pool: "KVPool",
    policy: SharingPolicy = CROSS_USER_SELECTIVE,
) -> int:
    """1 iff the probe would reuse any cached state; the only signal an attacker sees."""
    if isinstance(probe, Request):
        tokens = probe.tokens
        request = probe
    else:
        tokens = tuple(probe)
        request = None
    if policy.mode is SharingMode.CROSS_USER_SELECTIVE:
        # Short-circuit equivalent of match_rate > 0: any verified candidate covers tokens.
        cands = find_candidates(tokens, pool)
        if not cands:
            return 0
        ph = prefix_hash_array(tokens, pool.params)
        return int(any(verify(c, tokens, ph, pool) for c in cands))
    if request is None:
        request = Request("probe", "adversary", tokens, ("user",) * len(tokens))
    plan = match_request(request, (0,) * len(tokens), pool, policy)
    return int(plan.match_rate > 0)
