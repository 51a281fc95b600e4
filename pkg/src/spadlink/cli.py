"""Command-line interface.

  spadlink run --config FILE --out DIR [--seed N] [--workers K] [--scenario NAME]
  spadlink validate --config FILE
  spadlink oracle

Exit codes: 0 success, 2 configuration error, 3 simulation error.
"""

import argparse
import sys
from dataclasses import replace

from .bench import emit_report, run_scenario
from .config import dump_defaults, load_config
from .errors import ConfigError, SpadLinkError
from .oracles import run_all


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spadlink",
        description="Link-level simulator and benchmark harness for "
        "SPAD-array optical wireless links",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a sweep scenario")
    run_p.add_argument("--config", required=True, help="INI config file")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--seed", type=int, default=None, help="override master seed")
    run_p.add_argument("--workers", type=int, default=1, help="parallel point workers")
    run_p.add_argument("--scenario", default=None, help="override the config scenario")

    val_p = sub.add_parser("validate", help="parse and validate a config file")
    val_p.add_argument("--config", required=True, help="INI config file")

    sub.add_parser("oracle", help="run the brute-force/analytic oracle suite")

    dump_p = sub.add_parser("defaults", help="print the built-in default config")
    del dump_p
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"config OK: scenario={cfg.scenario} modulation={cfg.modulation} "
                  f"points={len(cfg.power_grid)} powers")
            return 0
        if args.command == "defaults":
            print(dump_defaults())
            return 0
        if args.command == "oracle":
            checks = run_all()
            width = max(len(c.name) for c in checks)
            failed = 0
            for check in checks:
                status = "PASS" if check.passed else "FAIL"
                print(f"{check.name:<{width}}  {status}  {check.detail}")
                failed += 0 if check.passed else 1
            if failed:
                print(f"{failed} oracle check(s) failed", file=sys.stderr)
                return 3
            return 0
        if args.command == "run":
            cfg = load_config(args.config)
            if args.scenario is not None:
                cfg = replace(cfg, scenario=args.scenario)
            if args.seed is not None:
                cfg = replace(cfg, master_seed=args.seed)
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            result = run_scenario(cfg, workers=args.workers)
            written = emit_report(result, args.out)
            for path in written:
                print(path)
            return 0
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SpadLinkError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
