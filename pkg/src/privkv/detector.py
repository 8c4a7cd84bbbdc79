"""Sensitivity detection policies and controlled mask perturbation.

Policies operate on token ids. The classifier policy is a dictionary stub:
each category is a set of token ids, and a privacy level enables a nested
group of categories.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .core import Request, SensitivityMask

# Category groups mirror the detector tiers: a core set of personal
# identifiers, the remaining personal identifiers, then non-personal ones.
PERSONAL_CORE = "personal_core"
PERSONAL_EXTENDED = "personal_extended"
NON_PERSONAL = "non_personal"

DEFAULT_LEVELS: dict[str, tuple[str, ...]] = {
    "low": (PERSONAL_CORE,),
    "medium": (PERSONAL_CORE, PERSONAL_EXTENDED),
    "high": (PERSONAL_CORE, PERSONAL_EXTENDED, NON_PERSONAL),
}
LEVEL_ORDER = ("low", "medium", "high")


class PolicyKind(str, enum.Enum):
    USER_RULES = "user_rules"
    DICTIONARY = "dictionary"
    STRICT = "strict"


@dataclass(frozen=True)
class DetectionPolicy:
    kind: PolicyKind
    rules: tuple[tuple[int, ...], ...] = ()
    categories: Mapping[str, frozenset[int]] = field(default_factory=dict)
    level: str | None = None
    levels: Mapping[str, tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_LEVELS))

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "rules", tuple(tuple(int(t) for t in r) for r in self.rules))
        object.__setattr__(
            self, "categories", {k: frozenset(v) for k, v in self.categories.items()}
        )
        if self.kind is PolicyKind.USER_RULES:
            if not self.rules or any(len(r) == 0 for r in self.rules):
                raise ValueError("user_rules policy needs at least one non-empty rule")
        if self.kind is PolicyKind.DICTIONARY:
            if not self.categories:
                raise ValueError("dictionary policy needs at least one category")
            self._check_levels()

    def _check_levels(self) -> None:
        prev: set[str] = set()
        for name in LEVEL_ORDER:
            if name not in self.levels:
                continue
            cur = set(self.levels[name])
            if not prev <= cur:
                raise ValueError(f"level {name!r} must include every category of lower levels")
            prev = cur
        if self.level is not None and self.level not in self.levels:
            raise ValueError(f"unknown privacy level {self.level!r}")

    def enabled_categories(self) -> tuple[str, ...]:
        if self.level is None:
            return tuple(self.categories)
        return tuple(c for c in self.levels[self.level] if c in self.categories)

    def with_level(self, level: str) -> "DetectionPolicy":
        return DetectionPolicy(self.kind, self.rules, self.categories, level, self.levels)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DetectionPolicy":
        return cls(
            kind=PolicyKind(data["kind"]),
            rules=tuple(tuple(r) for r in data.get("rules", ())),
            categories={k: frozenset(v) for k, v in data.get("categories", {}).items()},
            level=data.get("level"),
            levels={k: tuple(v) for k, v in data.get("levels", DEFAULT_LEVELS).items()},
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "level": self.level,
            "rules": [list(r) for r in self.rules],
            "categories": {k: sorted(v) for k, v in self.categories.items()},
            "levels": {k: list(v) for k, v in self.levels.items()},
        }


def load_policy(path: str | Path) -> DetectionPolicy:
    return DetectionPolicy.from_dict(json.loads(Path(path).read_text()))


def _rule_mask(tokens: Sequence[int], rules: Sequence[Sequence[int]]) -> list[int]:
    n = len(tokens)
    bits = [0] * n
    for rule in rules:
        k = len(rule)
        first = rule[0]
        for start in range(n - k + 1):
            if tokens[start] == first and tuple(tokens[start : start + k]) == tuple(rule):
                bits[start : start + k] = [1] * k
    return bits


def apply_policy(req: Request, policy: DetectionPolicy) -> SensitivityMask:
    """Sensitivity mask for ``req``; a request's ``mask_override`` wins verbatim."""
    if req.mask_override is not None:
        return req.mask_override
    if policy.kind is PolicyKind.USER_RULES:
        return tuple(_rule_mask(req.tokens, policy.rules))
    if policy.kind is PolicyKind.DICTIONARY:
        marked: set[int] = set()
        for name in policy.enabled_categories():
            marked |= policy.categories[name]
        return tuple(int(t in marked) for t in req.tokens)
    return tuple(int(label == "user") for label in req.region_labels)


@dataclass(frozen=True)
class PerturbParams:
    fn_rate: float = 0.0
    fp_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("fn_rate", "fp_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def perturb_mask(mask: Sequence[int], params: PerturbParams) -> SensitivityMask:
    """Inject false negatives (1 -> 0) and false positives (0 -> 1).

    One uniform draw per position drives both flip directions, so for a fixed
    seed the flipped sets are nested as the rates grow.
    """
    bits = np.asarray(mask, dtype=np.int64)
    u = np.random.default_rng(params.seed).random(bits.size)
    out = bits.copy()
    out[(bits == 1) & (u < params.fn_rate)] = 0
    out[(bits == 0) & (u < params.fp_rate)] = 1
    return tuple(int(b) for b in out)
