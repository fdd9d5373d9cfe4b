"""Command-line entry point: ``liftbreg train|eval|compare``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .experiments import PRESETS, ConfigError, compare, evaluate_file, make_config, parse_overrides, run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liftbreg", description="Lifted Bregman network training")
    sub = ap.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a preset or configured run")
    tr.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
    tr.add_argument("--config", type=Path, help="key = value config file")
    tr.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (repeatable)")
    tr.add_argument("--data", default=os.environ.get("DATA_DIR"),
                    help="data root (default: $DATA_DIR)")
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--quiet", action="store_true")

    ev = sub.add_parser("eval", help="evaluate a saved model")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", default=os.environ.get("DATA_DIR"))
    ev.add_argument("--split", choices=("train", "test"), default="test")

    cp = sub.add_parser("compare", help="merge metrics of several runs")
    cp.add_argument("dirs", nargs="+")
    cp.add_argument("--out", default="compare")

    sub.add_parser("presets", help="list the built-in presets")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            if not args.preset and not args.config:
                raise ConfigError("give --preset and/or --config")
            text = args.config.read_text() if args.config else None
            cfg = make_config(args.preset, text, parse_overrides(args.overrides), seed=args.seed)
            res = run(cfg, args.data, args.out, log=None if args.quiet else print)
            print(f"wrote {res['paths']['metrics']} and {res['paths']['model']}")
        elif args.command == "eval":
            print(json.dumps(evaluate_file(args.model, args.data, args.split), indent=2))
        elif args.command == "compare":
            res = compare(args.dirs, args.out)
            print(f"wrote {res['long']}, {res['wide']} and {len(res['plots'])} plots")
        elif args.command == "presets":
            for name, values in PRESETS.items():
                print(f"{name}: {values['optimizer']} on {values['dataset']}, "
                      f"{values['epochs']} epochs")
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
