"""Command line entry point: ``skycomp <verb> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, NumericalError
from .experiments import ExperimentSpec, default_config, run_experiment
from .scenario import ScenarioConfig

log = logging.getLogger("skycomp")

VERBS = {
    "bounds": "bounds_tightness",
    "converge": "convergence",
    "sweep-speed": "speed_sweep",
    "sweep-groups": "grouping_sweep",
    "stats": "appendix_stats",
    "snapshot": "trajectory_snapshot",
}
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _float_list(text):
    return tuple(float(v) for v in text.split(",") if v)


def _int_list(text):
    return tuple(int(v) for v in text.split(",") if v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skycomp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="scenario JSON file (all keys required)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--trials", type=int, help="Monte-Carlo trials")
        p.add_argument("--mode", choices=("full", "current", "static", "all"), default="all")
        p.add_argument("--dump-subproblems", action="store_true",
                       help="write every convex subproblem and its solution to JSON")
        if verb == "sweep-speed":
            p.add_argument("--speeds", type=_float_list, default=(0.0, 5.0, 10.0, 15.0, 20.0))
        if verb == "sweep-groups":
            p.add_argument("--groups", type=_int_list, default=(2, 3, 6, 9))
        if verb == "snapshot":
            p.add_argument("--stride", type=int, default=1)
    return parser


def make_spec(args) -> ExperimentSpec:
    kind = VERBS[args.verb]
    config = ScenarioConfig.from_json(args.config) if args.config else default_config(kind)
    modes = ("full", "current", "static") if args.mode == "all" else (args.mode,)
    extra = {}
    if hasattr(args, "speeds"):
        extra["speeds"] = args.speeds
    if hasattr(args, "groups"):
        extra["group_counts"] = args.groups
    if hasattr(args, "stride"):
        extra["stride"] = args.stride
    return ExperimentSpec(kind, config, args.out, trials=args.trials, seed=args.seed, modes=modes,
                          dump_subproblems=args.dump_subproblems, **extra)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        spec = make_spec(args)
        path = run_experiment(spec)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
