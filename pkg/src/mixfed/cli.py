"""Command line entry point.

    mixfed run    --config c.json --seed 7 --out results/
    mixfed ablate --config c.json --out results/

``run`` executes one experiment; ``ablate`` runs the full model plus the
four single-removal variants under a shared seed and writes a comparison
CSV. Exit codes: 0 success, 1 run failure, 2 configuration failure. The
MIXFED_OUT environment variable overrides the output directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from pathlib import Path

from .config import AblationFlags, ExperimentConfig, parse_config, preset
from .errors import ConfigError, MixfedError
from .federation import run_experiment

ABLATION_VARIANTS = (
    ("full", AblationFlags()),
    ("no-tailored", AblationFlags(no_tailored_updating=True)),
    ("no-memory", AblationFlags(no_memory=True)),
    ("no-triplet", AblationFlags(no_triplet=True)),
    ("no-cls", AblationFlags(no_cls=True)),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixfed", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--preset", choices=["default", "reference", "iid"],
                       help="base configuration before file/flag overrides")
        p.add_argument("--seed", type=int, help="experiment root seed")
        p.add_argument("--out", help="output directory (env MIXFED_OUT overrides)")
        p.add_argument("--rounds", type=int, help="number of federated rounds")
        p.add_argument("--epochs", type=int, help="local epochs per round")
        p.add_argument("--threads", type=int, help="client training threads (0 = one per client)")
        p.add_argument("--resume", action="store_true",
                       help="continue from checkpoint.bin in the output directory")

    run_p = sub.add_parser("run", help="run one experiment")
    common(run_p)
    run_p.add_argument("--algo", choices=["mdm", "fedavg", "fedprox"], help="training algorithm")

    abl_p = sub.add_parser("ablate", help="run the full model and its four single-removal variants")
    common(abl_p)
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config is not None and args.preset is not None:
        raise ConfigError("--config and --preset are mutually exclusive")
    overrides = {
        "seed": args.seed,
        "rounds": args.rounds,
        "local_epochs": args.epochs,
        "threads": args.threads,
        "algo": getattr(args, "algo", None),
    }
    if args.preset is not None:
        merged = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(preset(args.preset), **merged)
    return parse_config(args.config, overrides)


def _out_dir(args) -> Path | None:
    env = os.environ.get("MIXFED_OUT")
    if env:
        return Path(env)
    return Path(args.out) if args.out else None


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    resume_from = None
    if args.resume and out is not None and (out / "checkpoint.bin").exists():
        resume_from = out / "checkpoint.bin"
    reports = run_experiment(cfg, out_dir=out, resume_from=resume_from)
    final = reports[-1]
    print(f"rounds={final.round_index} average_mdice={final.average_mdice:.4f}")
    for cm in final.clients:
        print(f"  client {cm.client_id}: mdice={cm.mdice:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    rows = []
    for name, flags in ABLATION_VARIANTS:
        variant_cfg = dataclasses.replace(cfg, algo="mdm", ablation=flags)
        variant_out = out / name if out is not None else None
        resume_from = None
        if args.resume and variant_out is not None and (variant_out / "checkpoint.bin").exists():
            resume_from = variant_out / "checkpoint.bin"
        reports = run_experiment(variant_cfg, out_dir=variant_out, resume_from=resume_from)
        final = reports[-1]
        rows.append((name, {cm.client_id: cm.mdice for cm in final.clients}, final.average_mdice))
        print(f"{name}: average_mdice={final.average_mdice:.4f}")
    if out is not None:
        client_ids = sorted(rows[0][1])
        with open(out / "ablation.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["variant", *[f"client{cid}" for cid in client_ids], "average"])
            for name, per_client, avg in rows:
                writer.writerow([name, *[repr(per_client[cid]) for cid in client_ids], repr(avg)])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_ablate(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except MixfedError as e:
        print(f"run failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
