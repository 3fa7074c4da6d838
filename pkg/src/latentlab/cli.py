"""Command-line entry points: run, compare, render.

Exit codes: 0 success, 1 invalid config (with a structured report naming the
offending key), 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

from .config import ExperimentConfig, load_config
from .errors import ConfigError, ValidationError
from .harness import compare, render, run

PRESETS = ("solver-compare", "init-ablation", "component-ablation", "artifact-benchmark")


def preset_path(name: str):
    return resources.files("latentlab").joinpath("presets", f"{name}.json")


def _load(config_arg: str) -> ExperimentConfig:
    if config_arg in PRESETS:
        with resources.as_file(preset_path(config_arg)) as p:
            return load_config(p)
    return load_config(config_arg)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="latentlab",
        description="Measurement-guided diffusion sampling experiments on synthetic fields.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config (or a bundled preset name)")
    p_run.add_argument("config", help=f"path to a JSON config, or one of {', '.join(PRESETS)}")
    p_run.add_argument("--out", default=None, help="output directory (default: results/<name>)")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--trials", type=int, default=None, help="override the trial count")
    p_run.add_argument("--threads", type=int, default=1, help="concurrent trials")

    p_cmp = sub.add_parser("compare", help="verify manifests and print a summary table")
    p_cmp.add_argument("manifests", nargs="+", help="result directories containing manifest.json")

    p_ren = sub.add_parser("render", help="convert a raw field dump to PGM/PPM")
    p_ren.add_argument("dump", help="path to a .fld dump")
    p_ren.add_argument("--out", default=None)
    p_ren.add_argument("--min", type=float, default=None, dest="vmin")
    p_ren.add_argument("--max", type=float, default=None, dest="vmax")

    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            try:
                cfg = _load(args.config)
                if args.seed is not None or args.trials is not None:
                    raw = dict(cfg.raw)
                    if args.seed is not None:
                        raw["seed"] = args.seed
                    if args.trials is not None:
                        raw["trials"] = args.trials
                    cfg = ExperimentConfig.from_dict(raw)
            except ConfigError as e:
                print("invalid config:", file=sys.stderr)
                print(f"  key   : {e.key}", file=sys.stderr)
                print(f"  problem: {e.message}", file=sys.stderr)
                return 1
            out = args.out or os.path.join("results", os.path.splitext(os.path.basename(str(args.config)))[0])
            manifest = run(cfg, out, threads=args.threads)
            print(f"wrote {len(manifest['files'])} artifacts to {out}")
            print(json.dumps({"rows": len(manifest["rows"]), "out": out}))
            return 0
        if args.command == "compare":
            try:
                table = compare(args.manifests)
            except ValidationError as e:
                print(f"manifest verification failed: {e}", file=sys.stderr)
                return 1
            print(table)
            return 0
        # render
        out = render(args.dump, args.out, args.vmin, args.vmax)
        print(out)
        return 0
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
