"""Shared domain types and coarse segmentation of a prompt by its sensitivity mask.

All algorithmic positions are 1-based (token ``t_1`` is the first token). The
conversion to Python's 0-based storage happens only where a position is used
to index a tuple or array: ``tokens[i - 1]`` is token ``t_i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Mapping, NamedTuple, Sequence

TokenSeq = tuple[int, ...]
SensitivityMask = tuple[int, ...]
RegionLabel = Literal["system", "public", "user"]

REGION_LABELS: frozenset[str] = frozenset({"system", "public", "user"})
OOV_ID = 0


class CoarseSegment(NamedTuple):
    """Maximal run ``[a, b]`` (1-based, inclusive) of non-sensitive tokens."""

    a: int
    b: int

    def __len__(self) -> int:  # type: ignore[override]
        return self.b - self.a + 1


class SegmentSpan(NamedTuple):
    """Candidate reusable substring ``P[l:r]`` with its intra minus inter score."""

    l: int
    r: int
    score: float

    @property
    def length(self) -> int:
        return self.r - self.l + 1


def as_tokens(tokens: Iterable[int]) -> TokenSeq:
    out = tuple(int(t) for t in tokens)
    if any(t < 0 for t in out):
        raise ValueError("token ids must be non-negative")
    return out


def as_mask(bits: Iterable[int]) -> SensitivityMask:
    out = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in out):
        raise ValueError("mask bits must be 0 or 1")
    return out


@dataclass(frozen=True)
class Request:
    request_id: str
    user_id: str
    tokens: TokenSeq
    region_labels: tuple[str, ...]
    mask_override: SensitivityMask | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", as_tokens(self.tokens))
        object.__setattr__(self, "region_labels", tuple(self.region_labels))
        n = len(self.tokens)
        if len(self.region_labels) != n:
            raise ValueError(
                f"region_labels has length {len(self.region_labels)}, expected {n}"
            )
        bad = set(self.region_labels) - REGION_LABELS
        if bad:
            raise ValueError(f"unknown region labels: {sorted(bad)}")
        if self.mask_override is not None:
            mask = as_mask(self.mask_override)
            if len(mask) != n:
                raise ValueError(f"mask_override has length {len(mask)}, expected {n}")
            object.__setattr__(self, "mask_override", mask)

    def __len__(self) -> int:
        return len(self.tokens)


def coarse_segments(tokens: Sequence[int], mask: Sequence[int]) -> list[CoarseSegment]:
    """Split a prompt into maximal runs of mask-0 tokens, in ascending order.

    Sensitive tokens act as separators; leading and trailing sensitive tokens
    are treated the same as interior ones.
    """
    if len(tokens) != len(mask):
        raise ValueError(f"mask length {len(mask)} does not match token length {len(tokens)}")
    segments: list[CoarseSegment] = []
    start = None
    for i, bit in enumerate(mask, start=1):
        if bit == 0:
            if start is None:
                start = i
        else:
            if start is not None:
                segments.append(CoarseSegment(start, i - 1))
                start = None
    if start is not None:
        segments.append(CoarseSegment(start, len(mask)))
    return segments


def tokenize_text(text: str, vocab: Mapping[str, int]) -> TokenSeq:
    """Whitespace tokenizer; words missing from ``vocab`` map to ``OOV_ID``."""
    return tuple(vocab.get(word, OOV_ID) for word in text.split())


def detokenize(tokens: Sequence[int], vocab: Mapping[str, int]) -> str:
    inverse = {v: k for k, v in vocab.items()}
    return " ".join(inverse.get(t, "<unk>") for t in tokens)


def build_vocab(text: str) -> dict[str, int]:
    """Assign ids 1, 2, ... to words in order of first appearance (0 is OOV)."""
    vocab: dict[str, int] = {}
    for word in text.split():
        if word not in vocab:
            vocab[word] = len(vocab) + 1
    return vocab
