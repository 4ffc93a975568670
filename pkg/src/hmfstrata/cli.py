"""Command line entry point: ``hmfstrata <command> --config run.toml``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import config as cfgmod
from .errors import ConfigError, DependencyError, NumericGuardError, StrataError
from .pipeline import STAGES, Pipeline

log = logging.getLogger("hmfstrata")

COMMANDS = {
    "simulate": ("simulate",),
    "analyze": ("densities", "strata"),
    "gmt": ("gmt",),
    "cover": ("cover",),
    "report": ("report",),
    "all": STAGES,
}

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_NUMERIC = 0, 2, 3, 4


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run file (defaults are used when omitted)")
    common.add_argument("--out", help="output root; artifacts go to <out>/<config hash>/")
    common.add_argument("--seed", type=_u64, help="override the seed in the config")
    common.add_argument("--stages", help="comma separated stage list, overrides the command's stages")
    common.add_argument("-v", "--verbose", action="count", default=0)
    ap = argparse.ArgumentParser(prog="hmfstrata", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, stages in COMMANDS.items():
        sub.add_parser(name, parents=[common], help="stages: " + ", ".join(stages))
    return ap


def resolve(args) -> tuple:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.normalize({})
    if args.seed is not None:
        cfg["seed"] = args.seed
        cfgmod.validate(cfg)
    stages = COMMANDS[args.command]
    if args.stages:
        stages = tuple(s.strip() for s in args.stages.split(",") if s.strip())
        bad = [s for s in stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages {bad}; choose from {', '.join(STAGES)}")
    return cfg, stages


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, stages = resolve(args)
        pipe = Pipeline(cfg, args.out)
        pipe.run(stages)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(f"dependency error (producer: {exc.producer}): {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except NumericGuardError as exc:
        print(f"numeric guard: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StrataError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(pipe.root)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
