"""Command-line entry point.

Global flags come before the subcommand:

    swarmnav [--config FILE] [--seed N] [--deterministic] [--out-dir DIR] <command> ...

Exit codes: 0 success, 2 configuration error, 3 numerical abort during
training.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .checkpoint import load_checkpoint
from .errors import (
    ConfigMismatch,
    ConflictingFlags,
    CorruptFile,
    DensityInfeasible,
    FormatVersionMismatch,
    InsufficientMaps,
    NonFiniteLoss,
    SwarmNavError,
)
from . import harness
from .scenario import ScenarioSpec, SceneType, generate_scenario, save_scenario

_CONFIG_ERRORS = (
    ConfigMismatch,
    ConflictingFlags,
    CorruptFile,
    FormatVersionMismatch,
    InsufficientMaps,
    DensityInfeasible,
    ValueError,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarmnav", description=__doc__)
    parser.add_argument("--config", help="YAML run-config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--deterministic", action="store_true", help="single-threaded bit-reproducible mode")
    parser.add_argument("--out-dir", help="output directory for artifacts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenarios", help="generate obstacle maps")
    p.add_argument("--scene", nargs="+", default=["pillar", "cylinder", "mixed"],
                   choices=[s.value for s in SceneType])
    p.add_argument("--density", nargs="+", type=float, default=[0.1])
    p.add_argument("--map-seed", nargs="+", type=int, default=[0])
    p.add_argument("--target-count", type=int, default=8)

    p = sub.add_parser("train", help="co-train a policy on the config's training maps")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--maps", nargs="+", required=True)
    p.add_argument("--episodes", type=int, default=4)
    p.add_argument("--require-zero-shot", action="store_true")

    p = sub.add_parser("ablate", help="train with one ablation flag enabled")
    p.add_argument("--flag", required=True,
                   choices=["no_spatial", "no_temporal_gru", "no_residual", "plain_ppo"])

    p = sub.add_parser("sweep", help="vary the number of co-training scenarios")
    p.add_argument("--counts", nargs="+", type=int, required=True)

    p = sub.add_parser("export-embeddings", help="dump temporal embeddings to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--maps", nargs="+", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay-metrics", help="recompute metrics from a raw step log")
    p.add_argument("--steps-log", required=True)
    p.add_argument("--expect", help="report JSON that the recomputation must match exactly")
    return parser


def _load_run_config(args) -> harness.RunConfig:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        cfg = harness.run_config_from_dict(doc)
    else:
        cfg = harness.RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.deterministic:
        cfg = replace(cfg, deterministic=True)
    return cfg


def _out_dir(args, default: str) -> Path:
    path = Path(args.out_dir) if args.out_dir else Path(default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_gen_scenarios(args) -> int:
    out = _out_dir(args, "maps")
    for scene in args.scene:
        for density in args.density:
            for seed in args.map_seed:
                spec = ScenarioSpec(
                    scene_type=SceneType(scene),
                    density=density,
                    seed=(args.seed or 0) + seed,
                    target_count=args.target_count,
                )
                m = generate_scenario(spec)
                path = out / f"{m.scenario_id}.json"
                save_scenario(m, path)
                print(f"wrote {path} ({len(m.obstacles)} obstacles)")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args, "runs/train")
    if args.resume:
        result = harness.resume_run(cfg, args.resume, out_dir=out)
    else:
        result = harness.train_run(cfg, out_dir=out)
    print(f"trained {result.updates} updates, {result.episodes} episodes")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    out = _out_dir(args, "runs/eval")
    data = load_checkpoint(args.checkpoint)
    maps = harness.load_maps(args.maps)
    report = harness.evaluate(
        data, maps, args.episodes, seed=args.seed or 0, require_zero_shot=args.require_zero_shot
    )
    harness.write_step_log(report, out / "eval_steps.jsonl")
    harness.write_summary_csv(report, out / "summary.csv")
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    cfg = harness.apply_ablation(_load_run_config(args), args.flag)
    out = _out_dir(args, f"runs/ablate_{args.flag}")
    result = harness.train_run(cfg, out_dir=out)
    print(f"ablation {args.flag}: {result.updates} updates; checkpoint {result.checkpoint_path}")
    print("parameter groups: " + ", ".join(sorted({n.split(".")[0] for n in result.model.store.names()})))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args, "runs/sweep")
    results = harness.sweep_scenario_count(args.counts, cfg, out_dir=out)
    harness.write_sweep_csv(results, out / "sweep.csv")
    for count in sorted(results):
        o = results[count].overall
        print(f"count={count}: transfer={o.transfer_mean:.3f} collisions={o.collision_mean:.3f} free={o.free_mean:.3f}")
    return 0


def _cmd_export(args) -> int:
    data = load_checkpoint(args.checkpoint)
    maps = harness.load_maps(args.maps)
    rows = harness.export_embeddings(data, maps, args.steps, args.out, seed=args.seed or 0)
    print(f"wrote {rows} embedding rows to {args.out}")
    return 0


def _cmd_replay(args) -> int:
    records = harness.read_step_log(args.steps_log)
    report = harness.aggregate_step_records(records)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if args.expect:
        with open(args.expect, "r", encoding="utf-8") as fh:
            expected = json.load(fh)
        got = report.to_dict()
        got["zero_shot"] = expected.get("zero_shot", got["zero_shot"])  # flag is not derivable from steps
        if got != expected:
            print("replay does NOT match the expected report", file=sys.stderr)
            return 1
        print("replay matches the expected report exactly")
    return 0


_COMMANDS = {
    "gen-scenarios": _cmd_gen_scenarios,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "sweep": _cmd_sweep,
    "export-embeddings": _cmd_export,
    "replay-metrics": _cmd_replay,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NonFiniteLoss as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SwarmNavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
