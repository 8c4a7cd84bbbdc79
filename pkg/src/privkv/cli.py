"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 scale-guard refusal.
Log verbosity comes from the ``PRIVKV_LOG`` environment variable.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, RunConfig, load_config
from .simkit.attack import run_attack
from .simkit.serving import run_serving
from .simkit.sweep import AXES, ScaleGuardError, check_attack_scale, sweep, write_csv
from .simkit.workload import gen_workload, read_workload, write_workload

log = logging.getLogger("privkv")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SCALE = 0, 2, 3, 4


def _open_out(path: str):
    if path == "-":
        return _Stdout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()
        return False


def cmd_gen_workload(cfg: RunConfig, args) -> int:
    pairs = gen_workload(cfg.workload)
    with _open_out(args.out) as fh:
        lines = write_workload(pairs, fh)
    log.info("wrote %d requests to %s", lines, args.out)
    return EXIT_OK


def _load_pairs(path: str):
    try:
        return read_workload(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_serve(cfg: RunConfig, args) -> int:
    pairs = _load_pairs(args.workload)
    result = run_serving(pairs, cfg.policies, cfg.detection, cfg.serving)
    with _open_out(args.out) as fh:
        result.write_csv(fh)
        writer = csv.writer(fh, lineterminator="\n")
        for name, s in result.summaries.items():
            rows = result.for_policy(name)
            k = max(len(rows), 1)
            writer.writerow(
                [
                    name,
                    "ALL",
                    f"{s.mean_match_rate:.6f}",
                    f"{s.mean_recompute_rate:.6f}",
                    f"{s.mean_ttft_ms:.6f}",
                    f"{sum(r.retrieval_ms for r in rows) / k:.6f}",
                    f"{sum(r.segments_used for r in rows) / k:.6f}",
                ]
            )
    if args.summary:
        doc = {
            name: {
                "requests": s.requests,
                "hit_rate": s.hit_rate,
                "mean_match_rate": s.mean_match_rate,
                "mean_recompute_rate": s.mean_recompute_rate,
                "mean_ttft_ms": s.mean_ttft_ms,
                "p50_ttft_ms": s.p50_ttft_ms,
                "p95_ttft_ms": s.p95_ttft_ms,
                "mean_candidates": s.mean_candidates,
                "segment_length_histogram": {str(k): v for k, v in s.segment_length_histogram.items()},
            }
            for name, s in result.summaries.items()
        }
        with _open_out(args.summary) as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    for name, s in result.summaries.items():
        print(f"{name}: hit_rate={s.hit_rate:.3f} match_rate={s.mean_match_rate:.3f} "
              f"ttft={s.mean_ttft_ms:.1f}ms", file=sys.stderr)
    return EXIT_OK


def cmd_attack(cfg: RunConfig, args) -> int:
    check_attack_scale(cfg.workload, cfg.attack)
    pairs = _load_pairs(args.workload)
    longest = max((len(p.writer.tokens) for p in pairs), default=0)
    top = max((max(p.writer.tokens, default=0) for p in pairs), default=0)
    if longest > cfg.attack.max_prompt_len:
        raise ScaleGuardError(
            f"workload prompt of {longest} tokens exceeds attack max_prompt_len "
            f"{cfg.attack.max_prompt_len}"
        )
    if top >= cfg.attack.max_vocab:
        raise ScaleGuardError(
            f"workload token id {top} exceeds attack max_vocab {cfg.attack.max_vocab}"
        )
    vocab = list(range(1, cfg.workload.vocab_size))
    report = run_attack(pairs, cfg.detection, cfg.serving, vocab, cfg.attack.budget, cfg.attack.max_group)
    with _open_out(args.out) as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(report.summary_line())
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    axis = args.axis or cfg.sweep_axis
    if axis is None:
        raise ConfigError("no sweep axis: pass --axis or set sweep.axis")
    if args.grid is not None:
        grid = [json.loads(v) if _is_json(v) else v for v in args.grid.split(",") if v.strip()]
    else:
        grid = list(cfg.sweep_grid)
    if not grid:
        raise ConfigError("no sweep grid: pass --grid or set sweep.grid")
    rows = sweep(cfg.sweep_setup(), axis, grid)
    with _open_out(args.out) as fh:
        write_csv(rows, fh)
    return EXIT_OK


def _is_json(text: str) -> bool:
    try:
        json.loads(text)
    except json.JSONDecodeError:
        return False
    return True


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privkv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (dotted path, JSON value); repeatable",
        )
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--out", required=True, help="output path, or - for stdout")
        p.set_defaults(func=func)
        return p

    add("gen-workload", cmd_gen_workload, "write a seeded workload as JSONL")
    p = add("serve", cmd_serve, "simulate serving and write per-request metrics CSV")
    p.add_argument("--workload", required=True)
    p.add_argument("--summary", help="also write per-policy aggregates as JSON")
    p = add("attack", cmd_attack, "run the probing attack and write a recovery report JSON")
    p.add_argument("--workload", required=True)
    p = add("sweep", cmd_sweep, "sweep one axis and write a metrics CSV")
    p.add_argument("--axis", choices=AXES)
    p.add_argument("--grid", help="comma-separated grid values")
    return parser


def _seed_overrides(seed: int | None) -> list[str]:
    if seed is None:
        return []
    keys = ("seed", "workload.seed", "pool.hash_seed", "attention.seed", "perturb.seed")
    return [f"{k}={seed}" for k in keys]


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("PRIVKV_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, [*args.set, *_seed_overrides(args.seed)])
        return args.func(cfg, args)
    except ScaleGuardError as exc:
        print(f"privkv: refusing: {exc}", file=sys.stderr)
        return EXIT_SCALE
    except ConfigError as exc:
        print(f"privkv: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"privkv: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"privkv: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
