"""Batch experiment runner.

One subcommand per experiment kind; config file values are overridden by
flags.  Exit codes: 0 success, 2 validation error, 3 runtime failure.
Partial rows collected before an interrupt are flushed to disk.  Output is
byte-identical for identical (config, seed) across reruns and worker
counts.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .config import REQUIRED, ConfigInvalid, build_config, registry, schema_dict
from .cli_experiments import Collector


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def _write_outputs(cfg, col, interrupted=False):
    os.makedirs(cfg.out_dir, exist_ok=True)
    base = os.path.join(cfg.out_dir, cfg.kind)
    summary = {
        "experiment": cfg.kind,
        "seed": cfg.seed,
        "replicas": cfg.replicas,
        "parameters": {k: cfg.params[k] for k in sorted(cfg.params)},
        "config_digest": cfg.digest(),
        "interrupted": interrupted,
    }
    summary.update(col.summary)
    paths = []
    if cfg.out_format == "csv" and col.header is not None:
        csv_path = base + ".csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(col.header)
            for row in col.rows:
                w.writerow([_fmt(v) for v in row])
        paths.append(csv_path)
    else:
        summary["header"] = col.header
        summary["rows"] = col.rows
    json_path = base + "_summary.json"
    with open(json_path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    paths.append(json_path)
    return paths


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="zrplab",
        description="Desk-scale laboratory for the zero range process "
                    "with an infection overlay.",
    )
    sub = parser.add_subparsers(dest="command")
    lp = sub.add_parser("list-experiments", help="print experiment kinds")
    lp.add_argument("--machine", action="store_true",
                    help="emit the parameter schemas as JSON")
    for name, spec in sorted(registry().items()):
        sp = sub.add_parser(name, help=spec["description"])
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--seed", default=None,
                        help="master seed (required here or in the config)")
        sp.add_argument("--replicas", default=None)
        sp.add_argument("--workers", default=None)
        sp.add_argument("--out", default=None,
                        help="output directory (default $ZRPLAB_OUT or .)")
        sp.add_argument("--format", dest="out_format", default=None,
                        choices=["csv", "json"])
        for p in spec["params"]:
            sp.add_argument(f"--{p.name.replace('_', '-')}", dest=p.name,
                            default=None, help=p.help or p.kind)
    return parser


def run(config_path_or_args=None) -> int:
    """Entry point; returns the process exit code."""
    argv = config_path_or_args
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.command == "list-experiments":
        if args.machine:
            json.dump(schema_dict(), sys.stdout, sort_keys=True, indent=2)
            sys.stdout.write("\n")
        else:
            for name, spec in sorted(registry().items()):
                print(f"{name}: {spec['description']}")
                for p in spec["params"]:
                    tag = "required" if p.default is REQUIRED else f"default {p.default!r}"
                    help_part = f" {p.help}" if p.help else ""
                    print(f"    --{p.name.replace('_', '-')} ({p.kind}, {tag}){help_part}")
        return 0

    try:
        file_doc = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    file_doc = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigInvalid(f"cannot read config: {exc}") from exc
            if not isinstance(file_doc, dict):
                raise ConfigInvalid("config file must hold a JSON object")
        overrides = {
            "seed": args.seed, "replicas": args.replicas,
            "workers": args.workers, "format": args.out_format,
        }
        out = args.out if args.out is not None else None
        if out is None and "out" not in file_doc:
            out = os.environ.get("ZRPLAB_OUT", ".")
        if out is not None:
            overrides["out"] = out
        for p in registry()[args.command]["params"]:
            overrides[p.name] = getattr(args, p.name, None)
        cfg = build_config(args.command, file_doc, overrides)
    except ConfigInvalid as exc:
        print(f"zrplab: config error: {exc}", file=sys.stderr)
        return 2

    col = Collector()
    runner = registry()[cfg.kind]["runner"]
    try:
        runner(cfg, col)
    except KeyboardInterrupt:
        paths = _write_outputs(cfg, col, interrupted=True)
        print(f"zrplab: interrupted; partial results in {', '.join(paths)}",
              file=sys.stderr)
        return 3
    except Exception as exc:  # runtime failure: exit 3 with context
        print(f"zrplab: {cfg.kind} failed: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 3
    paths = _write_outputs(cfg, col)
    print(f"{cfg.kind}: seed={cfg.seed} replicas={cfg.replicas} "
          f"digest={cfg.digest()} -> {paths[0]}")
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
