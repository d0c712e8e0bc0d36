"""Command-line entry point: ``gearnet run|ablation|gen-data``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .data import build_transition_matrix, make_domain_pair, write_csv
from .harness import ConfigError, format_summary, load_config, run_experiment


def _target_path(out: Path) -> Path:
    return out.with_name(out.stem + ".target" + (out.suffix or ".csv"))


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
    common.add_argument("--preset", choices=["quick", "paper-scale"], default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="gearnet", description="Bilateral source/target training on synthetic domains.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("run", "GearNet runs (plus baseline/ablation if the config asks)"),
                       ("ablation", "baseline, GearNet and beta=0 runs for every seed")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("config")
        p.add_argument("--out", default=None, help="metrics CSV path (overrides the config)")
    p = sub.add_parser("gen-data", parents=[common], help="write a domain pair as CSV")
    p.add_argument("spec")
    p.add_argument("out", help="source CSV; the target goes next to it as <stem>.target.csv")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = getattr(args, "out", None) if args.command != "gen-data" else None
        cfg = load_config(args.config if args.command != "gen-data" else args.spec,
                          preset=args.preset, seed=args.seed, output=out)
        if args.command == "gen-data":
            noise = build_transition_matrix(cfg.noise_kind, cfg.data.n_classes, cfg.noise_rate)
            pair = make_domain_pair(cfg.data, noise)
            dest = Path(args.out)
            write_csv(pair.source, dest)
            write_csv(pair.target, _target_path(dest))
            print(f"wrote {dest} and {_target_path(dest)}")
            return 0
        if args.command == "ablation":
            cfg = dataclasses.replace(cfg, baseline=True, ablation=True)
        if cfg.output is None:
            cfg = dataclasses.replace(cfg, output="metrics.csv")
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"gearnet: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"gearnet: {exc}", file=sys.stderr)
        return 1
    print(format_summary(result.summary))
    print(f"metrics written to {cfg.output}")
    if result.failures:
        for seed, err in sorted(result.failures.items()):
            print(f"gearnet: seed {seed} failed: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
