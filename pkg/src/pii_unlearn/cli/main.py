"""``pii-unlearn`` command line entry point.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite stage,
4 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from pii_unlearn.cli import stages
from pii_unlearn.cli.config import ConfigError, load_config
from pii_unlearn.cli.manifest import MissingPrerequisite
from pii_unlearn.corpus import CoverageError, DisjointnessError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4

COMMANDS = ("inject", "train", "invert-train", "synthesize", "annotate", "unlearn", "eval", "report", "all")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pii-unlearn", description="Data-free PII unlearning pipeline at desk scale.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML experiment config (default: bundled desk config)")
    p.add_argument("--seed", type=int, help="global seed; overrides the config")
    p.add_argument("--force", action="store_true", help="re-run stages even when their outputs are current")
    p.add_argument("--mode", choices=("pseudo", "oracle", "ga"), help="unlearning mode (unlearn, eval)")
    p.add_argument("--tag", help="suffix distinguishing sweep points of the same mode")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config field, e.g. unlearn.beta=5")
    p.add_argument("--out", help="run directory; overrides the config")
    p.add_argument("--runs", nargs="*", default=[], help="additional run directories to include in the report")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run_command(args) -> object:
    cfg = load_config(args.config, args.overrides, args.seed)
    run = stages.Run.open(cfg, args.out, args.force)
    c = args.command
    if c == "inject":
        return stages.cmd_inject(run)
    if c == "train":
        return stages.cmd_train(run)
    if c == "invert-train":
        return stages.cmd_invert_train(run)
    if c == "synthesize":
        return stages.cmd_synthesize(run)
    if c == "annotate":
        return stages.cmd_annotate(run)
    if c == "unlearn":
        return stages.cmd_unlearn(run, args.mode, args.tag)
    if c == "eval":
        return stages.cmd_eval(run, args.mode, args.tag)
    if c == "report":
        return stages.cmd_report(run, args.runs)
    out = {}
    for name, fn in (("inject", stages.cmd_inject), ("train", stages.cmd_train)):
        out[name] = fn(run)
    modes = [args.mode] if args.mode else ["oracle", "pseudo", "ga"]
    if any(stages._data_source(cfg, stages.UnlearnMode(m)) == "pseudo" for m in modes):
        for name, fn in (("invert-train", stages.cmd_invert_train), ("synthesize", stages.cmd_synthesize), ("annotate", stages.cmd_annotate)):
            out[name] = fn(run)
    for m in modes:
        out[f"unlearn:{m}"] = stages.cmd_unlearn(run, m, args.tag)
        out[f"eval:{m}"] = stages.cmd_eval(run, m, args.tag)
    out["report"] = stages.cmd_report(run, args.runs)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run_command(args)
    except (ConfigError, CoverageError, DisjointnessError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisite as e:
        print(f"error: {e}; run `pii-unlearn {e.stage.split(':')[0]}` first", file=sys.stderr)
        return EXIT_MISSING
    except (RuntimeError, ValueError, ArithmeticError, OSError) as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result, indent=1, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
