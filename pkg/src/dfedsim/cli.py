"""Command-line entry point.

    dfedsim run <config> [--out DIR] [--workers N]
    dfedsim validate <config>
    dfedsim preset <name> --out DIR [--seeds N]
    dfedsim render <dir> [--out DIR]

Exit codes: 0 success, 1 validation failure, 2 runtime divergence, 3 I/O.
Worker-pool size defaults to the DFEDSIM_WORKERS environment variable.
"""
from __future__ import annotations

import argparse
import glob
import os
import sys

from .config import ConfigValidationError, load_config, run_from_config
from .presets import PRESET_NAMES, UnknownPresetError, run_preset
from .plots import SchemaMismatchError, render_curves


def _cmd_run(args) -> int:
    return run_from_config(args.config, out_root=args.out, workers=args.workers)


def _cmd_validate(args) -> int:
    try:
        specs = load_config(args.config)
    except ConfigValidationError as exc:
        print(str(exc))
        return 1
    except OSError as exc:
        print(f"cannot read config {args.config}: {exc}")
        return 3
    print(f"ok: {len(specs)} experiment(s)")
    return 0


def _cmd_preset(args) -> int:
    try:
        summary = run_preset(args.name, args.out, seeds=tuple(range(args.seeds)))
    except UnknownPresetError as exc:
        print(str(exc))
        return 1
    except OSError as exc:
        print(f"I/O failure: {exc}")
        return 3
    print(f"wrote {args.name} bundle to {args.out}")
    for key in ("bits_to_target", "mean_final_gap", "rounds_to_threshold"):
        if key in summary:
            print(f"{key}: {summary[key]}")
    return 0


def _cmd_render(args) -> int:
    pattern = os.path.join(args.directory, "**", "seed*.csv")
    csvs = sorted(glob.glob(pattern, recursive=True))
    if not csvs:
        print(f"no seed*.csv files under {args.directory}")
        return 1
    groups: dict[str, list[str]] = {}
    for path in csvs:
        groups.setdefault(os.path.dirname(path), []).append(path)
    out = args.out or args.directory
    try:
        for group_dir, paths in sorted(groups.items()):
            stem = os.path.relpath(group_dir, args.directory).replace(os.sep, "_")
            if stem == ".":
                stem = "curves"
            render_curves(paths, out, stem=stem)
    except SchemaMismatchError as exc:
        print(str(exc))
        return 1
    except OSError as exc:
        print(f"I/O failure: {exc}")
        return 3
    print(f"charts written to {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dfedsim", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute every experiment in a config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="root directory for outputs")
    p_run.add_argument("--workers", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_pre = sub.add_parser("preset", help="run a canned comparison study")
    p_pre.add_argument("name", choices=PRESET_NAMES)
    p_pre.add_argument("--out", required=True)
    p_pre.add_argument("--seeds", type=int, default=3, help="number of seeds")
    p_pre.set_defaults(func=_cmd_preset)

    p_ren = sub.add_parser("render", help="draw SVG charts from run CSVs")
    p_ren.add_argument("directory")
    p_ren.add_argument("--out", default=None)
    p_ren.set_defaults(func=_cmd_render)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
