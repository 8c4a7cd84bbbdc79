"""Summed-area table over an attention matrix.

``T[i, j]`` holds the sum of ``A[1..i, 1..j]``; any index below 1 reads as
zero. The table overwrites the attention storage, so after
:func:`build_in_place` the original matrix is gone.
"""
from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np

ATTN_MAGIC = b"ATTNMAT1"
STOCHASTIC_TOL = 1e-6
STOCHASTIC_HARD_TOL = 1e-3


def check_attention(A: np.ndarray) -> None:
    """Validate a causal, row-stochastic, non-negative attention matrix.

    Row sums off by more than 1e-6 only warn while they stay within 1e-3;
    exported attention is often slightly denormalized.
    """
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"attention matrix must be square, got shape {A.shape}")
    if A.size == 0:
        return
    if np.any(A < 0):
        raise ValueError("attention weights must be non-negative")
    if np.any(np.triu(A, k=1) != 0):
        raise ValueError("attention matrix must be causal (zero above the diagonal)")
    dev = float(np.max(np.abs(A.sum(axis=1) - 1.0)))
    if dev > STOCHASTIC_HARD_TOL:
        raise ValueError(f"attention rows must sum to 1 (max deviation {dev:.3g})")
    if dev > STOCHASTIC_TOL:
        warnings.warn(f"attention rows deviate from 1 by up to {dev:.3g}", stacklevel=2)


class SummedAreaTable:
    """Read-only view over a built table with 1-based rectangular queries."""

    def __init__(self, table: np.ndarray):
        self.table = table
        self.n = table.shape[0]

    def at(self, i: int, j: int) -> float:
        if i < 1 or j < 1:
            return 0.0
        return float(self.table[i - 1, j - 1])

    def rect_sum(self, x1: int, x2: int, y1: int, y2: int) -> float:
        """Sum of ``A`` over rows ``[x1, x2]`` and columns ``[y1, y2]``."""
        n = self.n
        if not (1 <= x1 <= x2 <= n and 1 <= y1 <= y2 <= n):
            raise ValueError(f"invalid region rows [{x1},{x2}] cols [{y1},{y2}] for n={n}")
        at = self.at
        return at(x2, y2) - at(x1 - 1, y2) - at(x2, y1 - 1) + at(x1 - 1, y1 - 1)

    def _check_span(self, l: int, r: int) -> None:
        if not 1 <= l <= r <= self.n:
            raise ValueError(f"invalid span ({l}, {r}) for n={self.n}")

    def intra_attn(self, l: int, r: int) -> float:
        # Causal input: the triangular sum equals the square block sum.
        self._check_span(l, r)
        return self.rect_sum(l, r, l, r)

    def inter_attn(self, l: int, r: int) -> float:
        self._check_span(l, r)
        if l == 1:
            return 0.0
        return self.rect_sum(l, r, 1, l - 1)


def build_in_place(A: np.ndarray) -> SummedAreaTable:
    """Turn ``A`` into its summed-area table without allocating a second matrix.

    ``A`` must be a writable float64 array; integer or read-only inputs are
    rejected rather than silently copied.
    """
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"attention matrix must be square, got shape {A.shape}")
    if A.dtype != np.float64:
        raise TypeError(f"expected float64 storage, got {A.dtype}")
    if A.shape[0]:
        # Row-wise then column-wise prefix sums realise
        # T[i,j] = A[i,j] + T[i-1,j] + T[i,j-1] - T[i-1,j-1].
        np.cumsum(A, axis=0, out=A)
        np.cumsum(A, axis=1, out=A)
    return SummedAreaTable(A)


def save_attention(path: str | Path, A: np.ndarray) -> None:
    n = A.shape[0]
    with open(path, "wb") as fh:
        fh.write(ATTN_MAGIC)
        fh.write(struct.pack("<Q", n))
        fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes())


def load_attention(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != ATTN_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:8]!r}")
    (n,) = struct.unpack("<Q", data[8:16])
    body = data[16:]
    if len(body) != 8 * n * n:
        raise ValueError(f"{path}: expected {n * n} float64 values, got {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(n, n)
