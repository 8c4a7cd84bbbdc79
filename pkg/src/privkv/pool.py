"""Segment store: prefix-hash index, containment dedup, LRU eviction.

The pool also keeps three read-mostly side views used only by the baseline
sharing policies (per-user last request, clear-prefix trie, fixed-chunk
digests). They are not counted against the token budget.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .annotator import ReusableSegment
from .core import Request
from .hashing import HashParams, encode_tokens, hash_tokens
from .retriever import locate, verified_matches, window_scan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoolConfig:
    capacity_tokens: int
    window_len: int = 128
    hash_seed: int = 0

    def __post_init__(self) -> None:
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.capacity_tokens < self.window_len:
            raise ValueError("capacity_tokens must be at least window_len")


class InsertKind(str, enum.Enum):
    STORED = "stored"
    DROPPED_AS_CONTAINED = "dropped_as_contained"
    SUPERSEDED_EXISTING = "superseded_existing"
    DUPLICATE = "duplicate"


@dataclass(frozen=True)
class InsertOutcome:
    kind: InsertKind
    entry_id: int | None
    superseded: tuple[int, ...] = ()
    evicted: tuple[int, ...] = ()


@dataclass
class PoolEntry:
    id: int
    segment: ReusableSegment
    last_used: int


class SessionStore:
    """Last request of every user, for same-session prefix reuse."""

    def __init__(self) -> None:
        self._last: dict[str, tuple[int, ...]] = {}

    def record(self, user_id: str, tokens: Sequence[int]) -> None:
        self._last[user_id] = tuple(tokens)

    def prefix_len(self, user_id: str, tokens: Sequence[int]) -> int:
        prev = self._last.get(user_id)
        if prev is None:
            return 0
        k = 0
        for a, b in zip(prev, tokens):
            if a != b:
                break
            k += 1
        return k


class PrefixTrie:
    """Trie over the clear prefixes (up to the first sensitive token) of past requests."""

    def __init__(self) -> None:
        self._root: dict[int, dict] = {}

    def insert(self, tokens: Sequence[int], mask: Sequence[int]) -> None:
        node = self._root
        for t, bit in zip(tokens, mask):
            if bit:
                break
            node = node.setdefault(t, {})

    def longest(self, tokens: Sequence[int], mask: Sequence[int]) -> int:
        node, k = self._root, 0
        for t, bit in zip(tokens, mask):
            if bit or t not in node:
                break
            node = node[t]
            k += 1
        return k


class ChunkIndex:
    """Digests of aligned, fully clear chunks of past requests, per chunk length."""

    def __init__(self) -> None:
        self._requests: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
        self._index: dict[int, set[bytes]] = {}

    @staticmethod
    def _chunks(tokens: Sequence[int], mask: Sequence[int], c: int) -> Iterable[bytes]:
        for start in range(0, len(tokens) - c + 1, c):
            if not any(mask[start : start + c]):
                yield encode_tokens(tokens[start : start + c])

    def record(self, tokens: Sequence[int], mask: Sequence[int]) -> None:
        item = (tuple(tokens), tuple(mask))
        self._requests.append(item)
        for c, digests in self._index.items():
            digests.update(self._chunks(*item, c))

    def contains(self, c: int, chunk: Sequence[int]) -> bool:
        if c not in self._index:
            self._index[c] = {d for item in self._requests for d in self._chunks(*item, c)}
        return encode_tokens(chunk) in self._index[c]


class KVPool:
    """Single-writer store of reusable segments.

    Lookups may run concurrently with each other; ``insert``, ``touch`` and
    eviction need exclusive access.
    """

    def __init__(self, config: PoolConfig, params: HashParams | None = None):
        self.config = config
        self.window_len = config.window_len
        self.params = params or HashParams.from_seed(config.hash_seed)
        self.entries: dict[int, PoolEntry] = {}
        self.prefix_index: dict[int, set[int]] = {}
        self.total_tokens = 0
        self._by_digest: dict[bytes, int] = {}
        # window hash -> owning entry id, or a list of ids when shared
        self._windows: dict[int, int | list[int]] = {}
        self._next_id = 1
        self.sessions = SessionStore()
        self.prefixes = PrefixTrie()
        self.chunks = ChunkIndex()

    def __len__(self) -> int:
        return len(self.entries)

    # -- queries ---------------------------------------------------------

    def lookup_prefix(self, h: int) -> set[int]:
        return set(self.prefix_index.get(h, ()))

    def _window_owners(self, h: int) -> list[int]:
        owners = self._windows.get(h)
        if owners is None:
            return []
        return [owners] if isinstance(owners, int) else list(dict.fromkeys(owners))

    # -- mutation --------------------------------------------------------

    def touch(self, entry_id: int, now: int) -> None:
        try:
            self.entries[entry_id].last_used = now
        except KeyError:
            raise KeyError(f"unknown pool entry {entry_id}") from None

    def _validate(self, segment: ReusableSegment) -> None:
        w = self.window_len
        if len(segment.tokens) < w:
            raise ValueError(f"segment of length {len(segment.tokens)} is shorter than window {w}")
        if segment.window_len != w:
            raise ValueError(f"segment window {segment.window_len} != pool window {w}")
        if any(segment.span_mask):
            raise ValueError(f"segment {segment.origin} covers sensitive tokens")
        if hash_tokens(segment.tokens[:w], self.params) != segment.prefix_hash:
            raise ValueError("segment prefix hash does not match pool hash parameters")

    def insert(self, segment: ReusableSegment, now: int) -> InsertOutcome:
        self._validate(segment)
        dup = self._by_digest.get(segment.digest)
        if dup is not None:
            self.touch(dup, now)
            return InsertOutcome(InsertKind.DUPLICATE, dup)

        m = len(segment.tokens)
        for eid in self._window_owners(segment.prefix_hash):
            host = self.entries[eid].segment
            if len(host.tokens) > m and locate(segment, host.tokens, self.params):
                return InsertOutcome(InsertKind.DROPPED_AS_CONTAINED, eid)

        inner = {
            eid
            for _, eid in verified_matches(segment.tokens, self)
            if len(self.entries[eid].segment.tokens) < m
        }
        for eid in sorted(inner):
            self._remove(eid)

        entry_id = self._next_id
        self._next_id += 1
        self.entries[entry_id] = PoolEntry(entry_id, segment, now)
        self.prefix_index.setdefault(segment.prefix_hash, set()).add(entry_id)
        self._by_digest[segment.digest] = entry_id
        for _, h in window_scan(segment.tokens, self.window_len, self.params):
            self._add_window(h, entry_id)
        self.total_tokens += m
        evicted = self._evict()
        kind = InsertKind.SUPERSEDED_EXISTING if inner else InsertKind.STORED
        return InsertOutcome(kind, entry_id, tuple(sorted(inner)), evicted)

    def _add_window(self, h: int, entry_id: int) -> None:
        cur = self._windows.get(h)
        if cur is None:
            self._windows[h] = entry_id
        elif isinstance(cur, int):
            self._windows[h] = [cur, entry_id]
        else:
            cur.append(entry_id)

    def _drop_window(self, h: int, entry_id: int) -> None:
        cur = self._windows.get(h)
        if isinstance(cur, int):
            if cur == entry_id:
                del self._windows[h]
        elif cur is not None:
            cur.remove(entry_id)
            if len(cur) == 1:
                self._windows[h] = cur[0]

    def _remove(self, entry_id: int) -> None:
        entry = self.entries.pop(entry_id)
        seg = entry.segment
        ids = self.prefix_index[seg.prefix_hash]
        ids.discard(entry_id)
        if not ids:
            del self.prefix_index[seg.prefix_hash]
        del self._by_digest[seg.digest]
        for _, h in window_scan(seg.tokens, self.window_len, self.params):
            self._drop_window(h, entry_id)
        self.total_tokens -= len(seg.tokens)

    def _evict(self) -> tuple[int, ...]:
        evicted = []
        while self.total_tokens > self.config.capacity_tokens and self.entries:
            victim = min(self.entries.values(), key=lambda e: (e.last_used, e.id))
            self._remove(victim.id)
            evicted.append(victim.id)
            log.debug("evicted pool entry %d (last_used=%d)", victim.id, victim.last_used)
        return tuple(evicted)

    def record_request(self, request: Request, mask: Sequence[int]) -> None:
        """Feed a served request into the baseline views (session, prefix, chunk)."""
        self.sessions.record(request.user_id, request.tokens)
        self.prefixes.insert(request.tokens, mask)
        self.chunks.record(request.tokens, mask)

    # -- export ----------------------------------------------------------

    def snapshot(self) -> list[dict]:
        rows = []
        for eid in sorted(self.entries):
            e = self.entries[eid]
            seg = e.segment
            rows.append(
                {
                    "id": eid,
                    "origin": list(seg.origin),
                    "tokens": list(seg.tokens),
                    "recompute_mask": list(seg.recompute_mask),
                    "digest": seg.digest.hex(),
                    "prefix_hash": str(seg.prefix_hash),
                    "full_hash": str(seg.full_hash),
                    "last_used": e.last_used,
                }
            )
        return rows

    def write_snapshot(self, fh: IO[str]) -> None:
        for row in self.snapshot():
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")

    def check_invariants(self) -> None:
        """Assert index consistency and budget; used by tests and debug runs."""
        live = set(self.entries)
        indexed = set().union(*self.prefix_index.values()) if self.prefix_index else set()
        assert indexed == live, (indexed, live)
        for eid, e in self.entries.items():
            assert eid in self.prefix_index[e.segment.prefix_hash]
            assert self._by_digest[e.segment.digest] == eid
        assert self.total_tokens == sum(len(e.segment.tokens) for e in self.entries.values())
        assert self.total_tokens <= self.config.capacity_tokens
