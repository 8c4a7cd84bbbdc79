"""Probing attack against the reuse oracle.

The adversary sees only one bit per probe: whether the probe reused any
cached state. Under selective sharing that bit is 1 exactly when the probe
contains some stored segment verbatim, so extending a firing probe never
yields new information. The search therefore works by *shrinking*: a minimal
firing window is exactly one stored segment, and its tokens are then known.

The adversary knows the prompt template (every non-sensitive token of the
victim request) and the positions of its sensitive tokens, but not their
values. This models strong background knowledge; recovering a sensitive
value still requires the pool to hold it.
"""
from __future__ import annotations

import dataclasses
import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

from ..core import SensitivityMask, TokenSeq
from ..detector import DetectionPolicy
from ..pool import KVPool
from ..retriever import CROSS_USER_SELECTIVE, NO_SHARING, reuse_oracle
from .serving import ServingConfig, run_serving
from .workload import WorkloadPair

Oracle = Callable[[Sequence[int]], int]


class BudgetExhausted(Exception):
    pass


@dataclass
class RecoveryReport:
    probes_issued: int = 0
    sensitive_tokens_total: int = 0
    sensitive_recovered_exact: int = 0
    nonsensitive_recovered: int = 0
    partial: bool = False
    # 0-based inclusive token ranges confirmed by probes; single-target reports only
    recovered_spans: list[tuple[int, int]] = field(default_factory=list)
    # one entry per attacked request when reports are merged
    per_request: list[dict] = field(default_factory=list)

    @property
    def direct_recovery_rate(self) -> float:
        if not self.sensitive_tokens_total:
            return 0.0
        return self.sensitive_recovered_exact / self.sensitive_tokens_total

    def merge(self, other: "RecoveryReport") -> "RecoveryReport":
        return RecoveryReport(
            self.probes_issued + other.probes_issued,
            self.sensitive_tokens_total + other.sensitive_tokens_total,
            self.sensitive_recovered_exact + other.sensitive_recovered_exact,
            self.nonsensitive_recovered + other.nonsensitive_recovered,
            self.partial or other.partial,
            [],
            self.per_request + other.per_request,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["direct_recovery_rate"] = self.direct_recovery_rate
        d["recovered_spans"] = [list(s) for s in self.recovered_spans]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def summary_line(self) -> str:
        flag = " (partial: budget exhausted)" if self.partial else ""
        return (
            f"direct_recovery_rate={self.direct_recovery_rate:.4f} "
            f"({self.sensitive_recovered_exact}/{self.sensitive_tokens_total} sensitive tokens), "
            f"nonsensitive_recovered={self.nonsensitive_recovered}, "
            f"probes={self.probes_issued}{flag}"
        )


class _Counter:
    def __init__(self, oracle: Oracle, budget: int | None):
        self.oracle = oracle
        self.budget = budget
        self.calls = 0

    def __call__(self, probe: Sequence[int]) -> int:
        if self.budget is not None and self.calls >= self.budget:
            raise BudgetExhausted
        self.calls += 1
        return self.oracle(probe)


@dataclass(frozen=True)
class AttackTarget:
    """Victim request as the adversary knows it, plus ground truth for scoring."""

    tokens: TokenSeq
    sensitive: SensitivityMask

    @property
    def template(self) -> list[int | None]:
        return [None if s else t for t, s in zip(self.tokens, self.sensitive)]


def _first_true(lo: int, hi: int, pred: Callable[[int], bool]) -> int | None:
    """Smallest x in [lo, hi] with pred(x) for a monotone false..true predicate."""
    if lo > hi or not pred(hi):
        return None
    while lo < hi:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def _last_true(lo: int, hi: int, pred: Callable[[int], bool]) -> int | None:
    """Largest x in [lo, hi] with pred(x) for a monotone true..false predicate."""
    if lo > hi or not pred(lo):
        return None
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if pred(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def _minimal_windows(known: list[int | None], s: int, e: int, oracle: _Counter):
    """All minimal firing windows inside the fully known range ``[s, e]`` (0-based)."""

    def fires(a: int, b: int) -> bool:
        return b >= a and bool(oracle(known[a : b + 1]))

    out = []
    while s <= e:
        r = _first_true(s, e, lambda x: fires(s, x))
        if r is None:
            break
        l = _last_true(s, r, lambda x: fires(x, r))
        out.append((l, r))
        s = l + 1
    return out


def attack_probe_loop(
    oracle: Oracle,
    target: AttackTarget,
    vocab: Sequence[int],
    window_len: int,
    budget: int | None = None,
    max_group: int = 2,
) -> RecoveryReport:
    """Template-guided shrinking search; see module docstring.

    Phase A enumerates stored segments inside known stretches of the template.
    Phase B guesses groups of up to ``max_group`` consecutive unknown values;
    whenever a guess makes a probe fire, the firing window is shrunk to a
    single stored segment and the guesses inside it are taken as learned.
    """
    call = _Counter(oracle, budget)
    known = target.template
    n = len(known)
    spans: list[tuple[int, int]] = []
    partial = False

    try:
        # Phase A: public stretches.
        k = 0
        while k < n:
            if known[k] is None:
                k += 1
                continue
            e = k
            while e + 1 < n and known[e + 1] is not None:
                e += 1
            if e - k + 1 >= window_len:
                spans.extend(_minimal_windows(known, k, e, call))
            k = e + 1

        # Phase B: guess unknown values, repeat while something new is learned.
        progress = True
        while progress:
            progress = False
            unknown = [i for i in range(n) if known[i] is None]
            for size in range(1, max_group + 1):
                for g in range(len(unknown) - size + 1):
                    group = unknown[g : g + size]
                    if any(known[i] is not None for i in group):
                        continue
                    if _probe_group(call, known, group, vocab, window_len, spans):
                        progress = True
    except BudgetExhausted:
        partial = True

    covered: set[int] = set()
    for l, r in spans:
        covered.update(range(l, r + 1))
    sens = [i for i, s in enumerate(target.sensitive) if s]
    exact = sum(
        1 for i in sens if known[i] is not None and known[i] == target.tokens[i]
    )
    nonsens = sum(1 for i in covered if not target.sensitive[i])
    return RecoveryReport(
        probes_issued=call.calls,
        sensitive_tokens_total=len(sens),
        sensitive_recovered_exact=exact,
        nonsensitive_recovered=nonsens,
        partial=partial,
        recovered_spans=sorted(set(spans)),
    )


def _probe_group(
    call: _Counter,
    known: list[int | None],
    group: list[int],
    vocab: Sequence[int],
    w: int,
    spans: list[tuple[int, int]],
) -> bool:
    n = len(known)
    g0, g1 = group[0], group[-1]
    # Known context around the group, bounded by the nearest other unknowns.
    a = g0
    while a - 1 >= 0 and known[a - 1] is not None:
        a -= 1
    b = g1
    while b + 1 < n and known[b + 1] is not None:
        b += 1
    if b - a + 1 < w:
        return False
    gaps = [(group[j] + 1, group[j + 1] - 1) for j in range(len(group) - 1)]

    def fires(x: int, y: int) -> bool:
        return y - x + 1 >= w and bool(call(known[x : y + 1]))

    # Trim context so pieces that avoid the group cannot fire on their own.
    lp = _first_true(a, g0, lambda x: not fires(x, g0 - 1)) if g0 > a else a
    rp = _last_true(g1, b, lambda y: not fires(g1 + 1, y)) if g1 < b else b
    if lp is None or rp is None:
        return False
    if any(hi >= lo and fires(lo, hi) for lo, hi in gaps):
        return False
    if rp - lp + 1 < w:
        return False

    probe = list(known[lp : rp + 1])
    slots = [i - lp for i in group]
    for guess in itertools.product(vocab, repeat=len(group)):
        for s, v in zip(slots, guess):
            probe[s] = v
        if not call(probe):
            continue
        # Shrink to one stored segment: latest start, then earliest end.
        l = _last_true(0, len(probe) - 1, lambda x: bool(call(probe[x:])))
        r = _first_true(l, len(probe) - 1, lambda y: bool(call(probe[l : y + 1])))
        lo, hi = lp + l, lp + r
        learned = False
        for i, v in zip(group, guess):
            if lo <= i <= hi:
                known[i] = v
                learned = True
        spans.append((lo, hi))
        return learned
    return False


def blind_window_sweep(
    oracle: Oracle,
    alphabet: Sequence[int],
    window_len: int,
    budget: int | None = None,
) -> tuple[list[TokenSeq], bool]:
    """Try every length-``window_len`` sequence over ``alphabet``; return those that fire.

    Without a template this is all an adversary can do. It finds stored
    segments of length exactly ``window_len``; longer segments stay hidden.
    """
    call = _Counter(oracle, budget)
    hits: list[TokenSeq] = []
    try:
        for seq in itertools.product(alphabet, repeat=window_len):
            if call(seq):
                hits.append(tuple(seq))
    except BudgetExhausted:
        return hits, True
    return hits, False


def score_recovered(
    target: AttackTarget, recovered: Iterable[tuple[int, int]]
) -> tuple[int, int]:
    """(sensitive, non-sensitive) positions reproduced by recovered 0-based spans."""
    pos: set[int] = set()
    for l, r in recovered:
        pos.update(range(l, r + 1))
    sens = sum(1 for i in pos if target.sensitive[i])
    return sens, len(pos) - sens



def build_victim_pool(pairs: Sequence[WorkloadPair], detection: DetectionPolicy, cfg: ServingConfig) -> KVPool:
    """Pool populated by the writers of ``pairs`` exactly as the serving loop would."""
    pool = KVPool(cfg.pool)
    run_serving(pairs, [NO_SHARING], detection, cfg, pool=pool)
    return pool


def run_attack(
    pairs: Sequence[WorkloadPair],
    detection: DetectionPolicy,
    cfg: ServingConfig,
    vocab: Sequence[int],
    budget: int | None = None,
    max_group: int = 2,
) -> RecoveryReport:
    """Attack every writer of the workload through one shared pool; reports are summed."""
    pool = build_victim_pool(pairs, detection, cfg)

    def oracle(probe: Sequence[int]) -> int:
        return reuse_oracle(probe, pool, CROSS_USER_SELECTIVE)

    total = RecoveryReport()
    per_call_budget = budget
    for pair in pairs:
        target = AttackTarget(pair.writer.tokens, pair.writer_truth)
        rep = attack_probe_loop(oracle, target, vocab, pool.window_len, per_call_budget, max_group)
        entry = {
            "request_id": pair.writer.request_id,
            "sensitive_tokens_total": rep.sensitive_tokens_total,
            "sensitive_recovered_exact": rep.sensitive_recovered_exact,
            "recovered_spans": [list(s) for s in rep.recovered_spans],
        }
        total = total.merge(dataclasses.replace(rep, per_request=[entry]))
        if per_call_budget is not None:
            per_call_budget = max(per_call_budget - rep.probes_issued, 0)
    return total
