# cli.py
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Iterable, List, Optional

from config_utils import PRESETS, load_config
from errors import ConfigError, OwplError, StageError
from pipeline import RunContext, run_command
from store import Store

logger = logging.getLogger(__name__)

COMMANDS = ("score", "hua", "gbd", "pseudo", "distill", "eval", "synth", "pipeline")
DEFAULT_CONFIG = "owpl.conf"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_STAGE = 4


def configure_logging() -> None:
    level_name = os.getenv("OWPL_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def run(
    subcommand: str,
    config_path: Optional[str] = None,
    overrides: Iterable[str] = (),
    output_dir: str = "out",
    threads: int = 1,
    timings: bool = True,
    preset: Optional[str] = None,
    method: Optional[str] = None,
) -> int:
    """Run one subcommand; returns the process exit status."""
    try:
        if subcommand not in COMMANDS:
            raise ConfigError(f"unknown subcommand '{subcommand}' (expected one of {', '.join(COMMANDS)})")
        if threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {threads}")
        cfg = load_config(config_path, overrides, preset)
        ctx = RunContext(cfg=cfg, store=Store(output_dir), workers=threads, timings=timings)
        report = run_command(ctx, subcommand, method=method)
        logger.info("%s finished, report at %s", subcommand, report)
        return EXIT_OK
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OwplError as exc:
        if exc.kind == "io-failure":
            print(f"io-error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"stage-error: {exc}", file=sys.stderr)
        return EXIT_STAGE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help=f"config file, [section] / key = value or YAML (default: {DEFAULT_CONFIG} if present)")
    common.add_argument("--output-dir", default="out")
    common.add_argument("--threads", type=int, default=1, help="worker cap for neighbor queries")
    common.add_argument("--no-timings", action="store_true", help="omit wall-clock fields from reports")
    common.add_argument("--preset", choices=sorted(PRESETS), default=None)
    common.add_argument("overrides", nargs="*", metavar="section.key=value")

    parser = argparse.ArgumentParser(prog="owpl", description="Open-world point cloud pseudo-labelling")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "score":
            p.add_argument("--method", choices=["msp", "maxlogit"], default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    config_path = args.config
    if config_path is None and Path(DEFAULT_CONFIG).exists():
        config_path = DEFAULT_CONFIG
    return run(
        args.command,
        config_path=config_path,
        overrides=args.overrides,
        output_dir=args.output_dir,
        threads=args.threads,
        timings=not args.no_timings,
        preset=args.preset,
        method=getattr(args, "method", None),
    )


if __name__ == "__main__":
    sys.exit(main())
