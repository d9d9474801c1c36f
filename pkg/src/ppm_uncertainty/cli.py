"""Command-line entry point: ``ppm-uncertainty <command> [options]``.

Exit codes: 0 success, 1 other pipeline error, 2 configuration error,
3 data error, 4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import __version__, pipeline
from .config import OUTPUT_ROOT_ENV, dump, load_config
from .errors import PPMError

COMMANDS = {
    "prepare": (pipeline.cmd_prepare, "parse, split and encode an event log into prefix datasets"),
    "synth": (pipeline.cmd_synth, "write a synthetic event log (or 1D regression set) with its ground truth"),
    "train": (pipeline.cmd_train, "train a model on the prepared training prefixes"),
    "predict": (pipeline.cmd_predict, "predict the prepared test prefixes with uncertainty"),
    "evaluate": (pipeline.cmd_evaluate, "retention, calibration, early-bucket and baseline reports"),
    "sweep": (pipeline.cmd_sweep, "technique x training-fraction x repeat grid"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppm-uncertainty",
        description="Uncertainty-aware predictive process monitoring.",
        epilog=f"Relative output directories are placed under ${OUTPUT_ROOT_ENV} when it is set. "
               "Precedence: defaults < --config file < --set overrides < --seed/--output-dir.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", help="YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. --set train.epochs=5 (repeatable)")
        p.add_argument("--seed", type=int, help="random seed (required here or in the config)")
        p.add_argument("--output-dir", help="run directory")
        p.add_argument("--print-config", action="store_true", help="print the merged config and exit")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.output_dir)
        if args.print_config:
            sys.stdout.write(dump(cfg))
            return 0
        out = COMMANDS[args.command][0](cfg)
    except PPMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
