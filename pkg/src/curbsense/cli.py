"""Command-line entry point: ``curbsense <command> --seed N --out DIR``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from curbsense.config import ConfigError, config_from_dict
from curbsense.nn.graph import NonFiniteError
from curbsense.nn.layers import ShapeError
from curbsense.nn.store import WeightStoreError
from curbsense.pipeline import STAGES, MissingArtifactError, Workspace, run_all, run_stage
from curbsense.signal_core import DegenerateRecordingError
from curbsense.weak_supervision import ProjectionRangeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = STAGES + ("all",)

log = logging.getLogger("curbsense")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="curbsense", description="Sidewalk accessibility from wheelchair accelerometer runs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="pipeline config JSON (defaults apply to omitted keys)")
    p.add_argument("--seed", type=int, help="master seed; overrides the config")
    p.add_argument("--out", help="output directory; overrides the config")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-fold work (default 1)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                   help="override one config value, e.g. --set evaluation.max_folds=2")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_override(data: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise UsageError(f"--set {key}: {part} is not a section")
    node[parts[-1]] = value


def load_config(args):
    if args.config:
        with open(args.config) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
        base = Path(args.config).parent
    else:
        data, base = {}, None
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["out"] = args.out
    for item in args.set:
        _apply_override(data, item)
    return config_from_dict(data, base_dir=base)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"curbsense: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = load_config(args)
        ws = Workspace(cfg)
        (ws.path("config.json")).write_text(cfg.to_json())
        if args.command == "all":
            run_all(ws, args.jobs)
        else:
            run_stage(ws, args.command, args.jobs)
    except (UsageError, ConfigError) as exc:
        print(f"curbsense: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"curbsense: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MissingArtifactError, WeightStoreError, ShapeError, DegenerateRecordingError, ProjectionRangeError,
            FileNotFoundError, ValueError) as exc:
        print(f"curbsense: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
