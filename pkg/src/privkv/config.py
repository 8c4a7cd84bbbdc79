"""Run configuration: one JSON document holding every module's settings.

Sub-section seeds default to the top-level ``seed``, which is required, so a
document always pins every random stream.
"""
from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from .annotator import AnnotatorConfig
from .detector import DetectionPolicy, PolicyKind
from .pool import PoolConfig
from .retriever import SharingPolicy
from .simkit.attention import AttentionGenParams
from .simkit.serving import CostModel, ServingConfig
from .simkit.sweep import AttackSettings, SweepSetup
from .simkit.workload import WorkloadParams, category_sets


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "workload": {},
    "annotator": {},
    "pool": {"capacity_tokens": 1 << 20},
    "attention": {},
    "detection": {"kind": "strict"},
    "perturb": {"fn_rate": 0.0, "fp_rate": 0.0},
    "cost": {},
    "policies": ["no_sharing", "cross_user_selective", "fixed_chunk:128", "prefix_only"],
    "reuse_fraction": 1.0,
    "measure_retrieval": False,
    "attack": {},
}

_KNOWN = set(DEFAULTS) | {"seed", "sweep"}


def _fields(cls, data: Mapping[str, Any], section: str) -> dict[str, Any]:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    return dict(data)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``a.b.c=value`` overrides; values are JSON when they parse, else strings."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
            node = nxt
        node[parts[-1]] = _parse_value(raw)
    return doc


@dataclass(frozen=True)
class RunConfig:
    seed: int
    workload: WorkloadParams
    annotator: AnnotatorConfig
    pool: PoolConfig
    attention: AttentionGenParams
    detection: DetectionPolicy
    cost: CostModel
    policies: tuple[SharingPolicy, ...]
    fn_rate: float
    fp_rate: float
    perturb_seed: int
    reuse_fraction: float
    measure_retrieval: bool
    attack: AttackSettings
    sweep_axis: str | None = None
    sweep_grid: tuple[Any, ...] = ()

    @property
    def serving(self) -> ServingConfig:
        return ServingConfig(
            annotator=self.annotator,
            pool=self.pool,
            attention=self.attention,
            cost=self.cost,
            fn_rate=self.fn_rate,
            fp_rate=self.fp_rate,
            perturb_seed=self.perturb_seed,
            reuse_fraction=self.reuse_fraction,
            measure_retrieval=self.measure_retrieval,
        )

    def sweep_setup(self) -> SweepSetup:
        return SweepSetup(self.workload, self.serving, self.detection, self.policies, self.attack)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        try:
            return cls._from_dict(raw)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def _from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - _KNOWN
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        if "seed" not in raw:
            raise ConfigError("config needs an explicit top-level 'seed'")
        seed = int(raw["seed"])
        doc = {**copy.deepcopy(DEFAULTS), **copy.deepcopy(dict(raw))}

        wl = _fields(WorkloadParams, doc["workload"], "workload")
        wl.setdefault("seed", seed)
        workload = WorkloadParams(**wl)

        annotator = AnnotatorConfig(**_fields(AnnotatorConfig, doc["annotator"], "annotator"))
        pl = _fields(PoolConfig, {"capacity_tokens": 1 << 20, **doc["pool"]}, "pool")
        pl.setdefault("window_len", annotator.min_segment_len)
        pl.setdefault("hash_seed", seed)
        if pl["window_len"] != annotator.min_segment_len:
            raise ConfigError(
                f"pool.window_len ({pl['window_len']}) must equal "
                f"annotator.min_segment_len ({annotator.min_segment_len})"
            )
        pool = PoolConfig(**pl)

        at = _fields(AttentionGenParams, doc["attention"], "attention")
        at.setdefault("seed", seed)
        if "block_spans" in at:
            raise ConfigError("attention.block_spans is derived from region labels")
        attention = AttentionGenParams(**at)

        det = dict(doc["detection"])
        kind = PolicyKind(det.get("kind", "strict"))
        if kind is PolicyKind.DICTIONARY and "categories" not in det:
            det["categories"] = {k: sorted(v) for k, v in category_sets(workload).items()}
        det["kind"] = kind.value
        detection = DetectionPolicy.from_dict(det)

        cost = CostModel(**_fields(CostModel, doc["cost"], "cost"))
        pert = dict(doc["perturb"])
        unknown = set(pert) - {"fn_rate", "fp_rate", "seed"}
        if unknown:
            raise ConfigError(f"perturb: unknown keys {sorted(unknown)}")
        policies = tuple(SharingPolicy.parse(p) for p in doc["policies"])
        if not policies:
            raise ConfigError("policies must not be empty")
        attack = AttackSettings(**_fields(AttackSettings, doc["attack"], "attack"))
        sw = doc.get("sweep") or {}
        cfg = cls(
            seed=seed,
            workload=workload,
            annotator=annotator,
            pool=pool,
            attention=attention,
            detection=detection,
            cost=cost,
            policies=policies,
            fn_rate=float(pert.get("fn_rate", 0.0)),
            fp_rate=float(pert.get("fp_rate", 0.0)),
            perturb_seed=int(pert.get("seed", seed)),
            reuse_fraction=float(doc["reuse_fraction"]),
            measure_retrieval=bool(doc["measure_retrieval"]),
            attack=attack,
            sweep_axis=sw.get("axis"),
            sweep_grid=tuple(sw.get("grid", ())),
        )
        cfg.serving  # cross-field validation
        return cfg


def load_config(path: str | Path, overrides: Iterable[str] = ()) -> RunConfig:
    """Read a JSON config; I/O problems raise OSError, content problems ConfigError."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(apply_overrides(doc, overrides))
