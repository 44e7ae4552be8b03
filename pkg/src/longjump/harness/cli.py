"""Command line entry point: ``longjump <experiment> --config PATH [--seed S] [--out DIR] [--replicas R]``.

Exit codes: 0 when the experiment's acceptance predicate holds, 1 when it
fails, 2 for usage or configuration errors. ``LONGJUMP_OUT`` overrides the
output directory unless ``--out`` is given.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, load_config, parse_config
from .experiments import run_experiment

OUT_ENV = "LONGJUMP_OUT"
BUNDLED = Path(__file__).resolve().parent.parent / "configs"

log = logging.getLogger("longjump")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="longjump", description="Run a long-jump particle-system experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="configuration file (default: the bundled config)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--replicas", type=int, help="override the replica count")
    p.add_argument("-q", "--quiet", action="store_true", help="only print the verdict")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = parse_config((BUNDLED / f"{args.experiment}.cfg").read_text(encoding="utf-8"))
        if cfg.name != args.experiment:
            raise ConfigError(f"config is for experiment {cfg.name!r}, not {args.experiment!r}")
        cfg = cfg.with_overrides(seed=args.seed, replicas=args.replicas)
    except (OSError, ConfigError) as exc:
        print(f"longjump: {exc}", file=sys.stderr)
        return 2
    out = args.out or os.environ.get(OUT_ENV) or cfg.output or f"results/{cfg.name}"
    log.info("running %s (seed %d, replicas %d) -> %s", cfg.name, cfg.seed, cfg.replicas, out)
    rep = run_experiment(cfg, out, log.info)
    for name, ok in rep.checks.items():
        log.info("  %-40s %s", name, "ok" if ok else "FAILED")
    print(f"{cfg.name}: {'PASS' if rep.passed else 'FAIL'} ({rep.elapsed:.1f}s)")
    return 0 if rep.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
