"""Command line: ``calabiflow <kind> --config <path> [--out DIR] [--seed INT]``.

``calabiflow describe <kind>`` prints the experiment catalog entry.
Exit status is 0 iff every in-run check passed, 1 on a failed check and 2
on a configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import KINDS, ConfigError, ExperimentConfig, describe, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="calabiflow", description=__doc__.splitlines()[0])
    p.add_argument("kind", help=f"experiment kind ({', '.join(KINDS)}) or 'describe'")
    p.add_argument("target", nargs="?", help="kind to describe")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="seed (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.kind == "describe":
            if not args.target:
                raise ConfigError(f"describe: needs a kind; valid kinds: {', '.join(KINDS)}")
            print(describe(args.target))
            return 0
        if args.config:
            cfg = ExperimentConfig.load(args.config, kind=args.kind, out=args.out,
                                        seed=args.seed)
        else:
            cfg = ExperimentConfig.from_mapping({"kind": args.kind}, out=args.out,
                                                seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    res = run(cfg)
    for name in res.failed():
        print(f"FAILED: {name}", file=sys.stderr)
    print(f"{cfg.kind}: {'pass' if res.ok else 'fail'} ({cfg.out}/report.txt)")
    return 0 if res.ok else 1


if __name__ == "__main__":
    sys.exit(main())
