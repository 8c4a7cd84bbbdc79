"""Synthetic causal attention with distance decay and block locality."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# exp(-700) is near the float64 underflow limit; larger decay rates are clamped.
_MAX_LOG_DECAY = 700.0


@dataclass(frozen=True)
class AttentionGenParams:
    lambda_decay: float = 0.05
    self_weight: float = 1.0
    block_spans: tuple[tuple[int, int], ...] = ()
    block_boost: float = 8.0
    noise: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lambda_decay <= 0:
            raise ValueError("lambda_decay must be positive")
        if self.self_weight < 0 or self.block_boost <= 0 or self.noise < 0:
            raise ValueError("self_weight, block_boost and noise must be non-negative")
        object.__setattr__(self, "block_spans", tuple(tuple(s) for s in self.block_spans))


def gen_attention(n: int, params: AttentionGenParams) -> np.ndarray:
    """Row-stochastic causal matrix; ``block_spans`` are 1-based inclusive ranges."""
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    dist = (i - j).astype(np.float64)
    causal = dist >= 0
    logw = np.where(causal, -np.minimum(params.lambda_decay * dist, _MAX_LOG_DECAY), -np.inf)
    if params.noise:
        rng = np.random.default_rng(params.seed)
        logw = logw + params.noise * rng.standard_normal((n, n))
    w = np.exp(logw)
    w[np.diag_indices(n)] += params.self_weight
    if params.block_spans:
        block = np.full(n, -1)
        for k, (s, e) in enumerate(params.block_spans):
            block[max(s, 1) - 1 : min(e, n)] = k
        same = (block[:, None] == block[None, :]) & (block[:, None] >= 0)
        w[same] *= params.block_boost
    w[~causal] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    return w


def region_blocks(labels: Sequence[str]) -> tuple[tuple[int, int], ...]:
    """Maximal runs of equal region labels, as 1-based inclusive spans."""
    spans = []
    start = 1
    for k in range(2, len(labels) + 2):
        if k > len(labels) or labels[k - 1] != labels[start - 1]:
            spans.append((start, k - 1))
            start = k
    return tuple(spans) if labels else ()
