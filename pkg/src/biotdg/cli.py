"""Command line: ``biotdg run <config>``, ``biotdg converge <config>``, ``biotdg print-defaults``.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 output
(I/O) error, 5 solver failure. ``BIOTDG_OUTPUT_DIR`` overrides the
configured output directory.
"""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import ConfigError, default_config_text, parse_config
from .driver import EXIT_CONFIG, EXIT_IO, EXIT_OK, OUTPUT_ENV, OutputError, converge, run
from .problems import ProblemError


def _load(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config file {path} is not UTF-8: {exc}") from None
    return parse_config(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="biotdg", description=__doc__.split("\n")[0],
                                 epilog=f"The environment variable {OUTPUT_ENV} overrides output_dir.")
    ap.add_argument("--version", action="version", version=f"biotdg {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="march one configured problem")
    p_run.add_argument("config")
    p_conv = sub.add_parser("converge", help="refinement study against the exact solution")
    p_conv.add_argument("config")
    sub.add_parser("print-defaults", help="print every configuration key with its default")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "print-defaults":
        sys.stdout.write(default_config_text())
        return EXIT_OK
    try:
        cfg = _load(args.config)
        action = run if args.command == "run" else converge
        return action(cfg)
    except (ConfigError, ProblemError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
