"""``hashcondense`` command line.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .data import ArchiveCorruptionError, ArchiveVersionError
from .harness import ExperimentSpec


def _common(p):
    p.add_argument("--config", help="JSON experiment spec")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a spec field with dotted-path syntax, e.g. condense.iterations=5")
    p.add_argument("--seed", type=int, help="run a single seed instead of every seed in the spec")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hashcondense", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("condense", help="condense the train split (iem or dm-plain)")
    _common(p)
    p.add_argument("--method", choices=["iem", "dm-plain"])

    p = sub.add_parser("baseline", help="random or herding coreset")
    _common(p)
    p.add_argument("--method", choices=["random", "herding"], required=True)

    p = sub.add_parser("evaluate", help="train a hashing model on an archive and report mAP")
    _common(p)
    p.add_argument("archive", help="archive directory, run directory, coreset JSON, or 'whole'")
    p.add_argument("--loss", help="hashing loss plugin")

    p = sub.add_parser("ablate", help="network/dataset augmentation 2x2 grid")
    _common(p)

    p = sub.add_parser("timing", help="mAP at matched wall-clock checkpoints")
    _common(p)

    p = sub.add_parser("generalize", help="evaluate one archive under several hashing losses")
    _common(p)
    p.add_argument("archive")
    p.add_argument("--plugins", nargs="+")

    p = sub.add_parser("report", help="summarize reports into a table")
    p.add_argument("root", nargs="?")
    p.add_argument("--plots", action="store_true")
    return parser


def _seeds(spec, args):
    return [args.seed] if args.seed is not None else spec.seeds


def run(args) -> object:
    if args.command == "report":
        text = harness.cmd_report(args.root, plots=args.plots)
        print(text)
        return text
    spec = ExperimentSpec.from_file(args.config, args.overrides)
    if args.command == "condense":
        out = [harness.cmd_condense(spec, s, args.method) for s in _seeds(spec, args)]
        for d in out:
            print((d / "result.txt").read_text(), end="")
        return out
    if args.command == "baseline":
        out = [harness.cmd_baseline(spec, s, args.method) for s in _seeds(spec, args)]
        for d in out:
            print((d / "result.txt").read_text(), end="")
        return out
    if args.command == "evaluate":
        reports = [r for s in _seeds(spec, args) for r in harness.cmd_evaluate(args.archive, spec, s, args.loss)]
        for r in reports:
            print(f"seed {r.provenance['seed']}  {r.code_bits} bits  mAP {100 * r.map_value:.2f}")
        return reports
    if args.command == "ablate":
        if args.seed is not None:
            spec.seeds = [args.seed]
        table = harness.cmd_ablate(spec)
        print(harness.format_ablation(table))
        return table
    if args.command == "timing":
        results = [harness.cmd_timing(spec, s) for s in _seeds(spec, args)]
        print(json.dumps([r["series"] for r in results], indent=1))
        return results
    if args.command == "generalize":
        results = [harness.cmd_generalize(spec, args.archive, args.plugins, s) for s in _seeds(spec, args)]
        for res in results:
            for name, rep in res["reports"].items():
                print(f"seed {res['seed']}  {name:<18} mAP {100 * rep['map_value']:.2f}")
        return results
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        run(args)
    except (ValueError, KeyError, TypeError, ArchiveCorruptionError, ArchiveVersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
