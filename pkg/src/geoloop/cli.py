"""``geoloop run|validate <config.json>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import ConfigError, load_config, run_experiment
from .linalg import SolverError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geoloop", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run an experiment"), ("validate", "check a config and echo it resolved")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="experiment config (JSON)")
        s.add_argument("--seed", type=int, default=None, help="base seed, overrides the config")
        s.add_argument("--full-profile", action="store_true",
                       help="use the published time profile (T=0.5, dt=0.001) instead of the config/desk one")
        if name == "run":
            s.add_argument("--jobs", type=int, default=1, help="worker processes for sample-parallel runs")
            s.add_argument("--out", default=None, help="output directory (overrides the config)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {"seed": args.seed}
    try:
        cfg = load_config(args.config, overrides=overrides, full_profile=args.full_profile)
    except OSError as exc:
        print(f"cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    if args.command == "validate":
        print(json.dumps(cfg.as_dict(), indent=2, sort_keys=True))
        return 0
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        run_experiment(cfg, args.out, jobs=args.jobs)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    out = args.out or cfg.out
    print((open(f"{out}/summary.txt").read()), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
