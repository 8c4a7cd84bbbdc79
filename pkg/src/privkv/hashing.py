"""Polynomial rolling hash over token ids modulo the Mersenne prime 2**61 - 1.

Token ``t`` enters the hash as ``t + 1`` so that id 0 is not absorbing.
"""
from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass
from typing import Sequence

MERSENNE_61 = (1 << 61) - 1


def mulmod(a: int, b: int) -> int:
    """``a * b mod 2**61-1`` using the shift-and-add Mersenne reduction."""
    x = a * b
    x = (x & MERSENNE_61) + (x >> 61)
    x = (x & MERSENNE_61) + (x >> 61)
    return x - MERSENNE_61 if x >= MERSENNE_61 else x


def tokenval(token: int) -> int:
    return (token + 1) % MERSENNE_61


@dataclass(frozen=True)
class HashParams:
    base: int
    modulus: int = MERSENNE_61

    def __post_init__(self) -> None:
        if not 2 <= self.base <= self.modulus - 2:
            raise ValueError(f"base must lie in [2, p-2], got {self.base}")

    @classmethod
    def from_seed(cls, seed: int, modulus: int = MERSENNE_61) -> "HashParams":
        return cls(base=random.Random(seed).randint(2, modulus - 2), modulus=modulus)

    def power(self, k: int) -> int:
        return pow(self.base, k, self.modulus)


@dataclass(frozen=True)
class PrefixHashes:
    """``h[k]`` is the hash of ``t_1..t_k``; ``pw[k]`` is ``base**k``."""

    h: tuple[int, ...]
    pw: tuple[int, ...]
    modulus: int = MERSENNE_61

    @property
    def n(self) -> int:
        return len(self.h) - 1

    def substring_hash(self, l: int, r: int) -> int:
        if not 1 <= l <= r <= self.n:
            raise ValueError(f"invalid substring bounds ({l}, {r}) for n={self.n}")
        return (self.h[r] - self.h[l - 1] * self.pw[r - l + 1]) % self.modulus


def prefix_hash_array(tokens: Sequence[int], params: HashParams) -> PrefixHashes:
    p, base = params.modulus, params.base
    h = [0] * (len(tokens) + 1)
    pw = [1] * (len(tokens) + 1)
    acc, pk = 0, 1
    for k, t in enumerate(tokens, start=1):
        acc = (acc * base + t + 1) % p
        pk = pk * base % p
        h[k] = acc
        pw[k] = pk
    return PrefixHashes(tuple(h), tuple(pw), p)


def substring_hash(ph: PrefixHashes, l: int, r: int) -> int:
    return ph.substring_hash(l, r)


def hash_tokens(tokens: Sequence[int], params: HashParams) -> int:
    """Hash of a whole sequence, folded from scratch."""
    p, base = params.modulus, params.base
    acc = 0
    for t in tokens:
        acc = (acc * base + t + 1) % p
    return acc


def roll_window(
    prev: int,
    out_tok: int,
    in_tok: int,
    w: int,
    params: HashParams,
    top_power: int | None = None,
) -> int:
    """Shift a length-``w`` window hash one token to the right.

    ``top_power`` is ``base**(w-1)``; pass it when rolling many times.
    """
    p = params.modulus
    if top_power is None:
        top_power = params.power(w - 1)
    return ((prev - (out_tok + 1) * top_power) * params.base + in_tok + 1) % p


def encode_tokens(tokens: Sequence[int]) -> bytes:
    """8-byte big-endian encoding per token, the input to :func:`digest`."""
    return struct.pack(f">{len(tokens)}Q", *tokens)


def digest(tokens: Sequence[int], l: int = 1, r: int | None = None) -> bytes:
    """SHA-256 over tokens ``t_l..t_r`` (1-based, inclusive)."""
    n = len(tokens)
    if r is None:
        r = n
    if n == 0 and (l, r) == (1, 0):
        return hashlib.sha256(b"").digest()
    if not 1 <= l <= r <= n:
        raise ValueError(f"invalid digest bounds ({l}, {r}) for n={n}")
    return hashlib.sha256(encode_tokens(tokens[l - 1 : r])).digest()
