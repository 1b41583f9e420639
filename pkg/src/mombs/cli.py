"""Command line entry point: ``mombs {run,compare,probe,gen-data}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .data import LTSpec, NLSpec, gen_longtail, gen_noisy, save_csv
from .harness import (
    ExperimentConfig,
    TrainingDiverged,
    compare_samplers,
    emit_outputs,
    format_summary,
    load_config,
    run_experiment,
    write_rows,
    write_summary_csv,
)


def _pivot(text):
    if text.lower() in ("inf", "infinity"):
        return math.inf
    return int(text)


def _common(p):
    p.add_argument("--config", type=Path, help="TOML key/value experiment file")
    p.add_argument("--seed", type=int, help="master seed; every random stream derives from it")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--sampler", help="random, mombs, anti_mombs, scl_hard, scl_linear, ohem "
                                     "(comma-separated for compare)")
    p.add_argument("--pivot-epoch", type=_pivot, help="epoch index or 'inf'")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--gamma", type=float, help="half-width of the uniform feature noise")
    p.add_argument("--disturbances", type=int, help="number G of disturbed forwards")
    p.add_argument("--epochs", type=int)
    p.add_argument("--num-seeds", type=int, default=None,
                   help="compare: run seeds seed .. seed+n-1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mombs", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("run", "train one seeded run and write its outputs"),
        ("compare", "run several samplers on shared seeds and summarise"),
        ("probe", "train with the random sampler, then probe one-step update efficacy"),
    ]:
        _common(sub.add_parser(name, help=help_))
    g = sub.add_parser("gen-data", help="write a synthetic dataset to CSV")
    g.add_argument("--kind", choices=("longtail", "noisy"), default="longtail")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True, help="CSV file to write")
    g.add_argument("--config", type=Path, help="TOML file with a [dataset] table")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        n = args.num_seeds or (len(cfg.seeds) if args.command == "compare" else 1)
        changes["seeds"] = list(range(args.seed, args.seed + n))
    elif args.num_seeds:
        changes["seeds"] = list(range(cfg.seeds[0], cfg.seeds[0] + args.num_seeds))
    if args.sampler:
        kinds = [k.strip() for k in args.sampler.split(",") if k.strip()]
        changes["sampler"] = kinds[0]
        changes["samplers"] = kinds
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    if args.pivot_epoch is not None:
        changes["pivot_epoch"] = args.pivot_epoch
    if args.batch_size is not None:
        changes["batch_size"] = args.batch_size
    if args.gamma is not None:
        changes["gamma"] = args.gamma
    if args.disturbances is not None:
        changes["G"] = args.disturbances
    if args.out is not None:
        changes["out"] = str(args.out)
    return replace(cfg, **changes) if changes else cfg


def cmd_run(cfg: ExperimentConfig) -> None:
    out = Path(cfg.out)
    for seed in cfg.seeds:
        result = run_experiment(cfg, seed)
        target = out if len(cfg.seeds) == 1 else out / f"seed{seed}"
        emit_outputs(result, target)
        print(f"seed {seed} {result.sampler}: final acc {result.final_accuracy:.4f} -> {target}")


def cmd_compare(cfg: ExperimentConfig) -> None:
    kinds = cfg.samplers or [cfg.sampler]
    summaries, runs = compare_samplers(cfg, kinds)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(summaries, out / "compare.csv")
    per_seed = [{"kind": k, "seed": r.seed, "final_accuracy": r.final_accuracy}
                for k, rs in runs.items() for r in rs]
    write_rows(out / "compare_seeds.csv", ("kind", "seed", "final_accuracy"), per_seed)
    text = format_summary(summaries)
    (out / "compare.txt").write_text(text + "\n")
    print(text)


def cmd_probe(cfg: ExperimentConfig) -> None:
    cfg = replace(cfg, sampler="random", pivot_epoch=math.inf,
                  probe_batches=cfg.probe_batches or 256)
    cmd_run(cfg)


def cmd_gen_data(args) -> None:
    raw = {}
    if args.config:
        raw = dict(load_config(args.config).dataset)
        raw.pop("kind", None)
    raw["seed"] = args.seed
    ds = gen_longtail(LTSpec(**raw)) if args.kind == "longtail" else gen_noisy(NLSpec(**raw))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-data":
            cmd_gen_data(args)
            return 0
        cfg = resolve_config(args)
        {"run": cmd_run, "compare": cmd_compare, "probe": cmd_probe}[args.command](cfg)
    except TrainingDiverged as exc:
        dump = Path(getattr(args, "out", None) or ".") / "divergence_dump.json"
        dump.parent.mkdir(parents=True, exist_ok=True)
        dump.write_text(json.dumps(exc.state))
        print(f"error: {exc} (state written to {dump})", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
