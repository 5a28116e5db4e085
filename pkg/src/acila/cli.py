"""Command line entry point: ``acila run``, ``acila bench`` and ``acila fixtures``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from .fabric import SwitchMode, TopologyError
from .report import FORMATS, emit
from .runner import EXIT_CROSSCHECK, EXIT_OK, EXIT_VALIDATION, RunError, run
from .scenario import ScenarioError, bundled_fixtures, load_scenario

FILTER_MODES = {"gateway": SwitchMode.PRIORITY_ONLY, "gateway+fabric": SwitchMode.PRIORITY_AND_FILTER}


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _scale(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("scale must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acila", description="Service-based access control entry-count simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and emit its report")
    r.add_argument("--scenario", required=True, help="scenario file, or the name of a bundled fixture")
    r.add_argument("--format", choices=FORMATS, default="human")
    r.add_argument("--out", help="write the report here instead of stdout")
    r.add_argument("--scale", type=_scale, help="multiply alpha of an assumption-generator scenario")
    r.add_argument("--seed", type=_seed, default=0, help="ECMP hash salt")
    r.add_argument("--filter-mode", choices=sorted(FILTER_MODES), default="gateway",
                   help="where the allow-list is enforced")
    r.add_argument("--strict-crosscheck", action=argparse.BooleanOptionalAction, default=True,
                   help="exit 2 when an analytic count disagrees with the simulated tables")
    r.add_argument("--inject-mismatch", metavar="DEVICE",
                   help="corrupt one concrete count on DEVICE (self-test of the cross-check)")
    r.add_argument("--figures", metavar="DIR", help="also render PNG figures into DIR")

    b = sub.add_parser("bench", help="informational codec and gateway throughput")
    b.add_argument("--packets", type=int, default=20000)
    b.add_argument("--alpha", type=float, default=1.0)
    b.add_argument("--seed", type=_seed, default=0)

    sub.add_parser("fixtures", help="list bundled scenario fixtures")
    return p


def _cmd_run(args) -> int:
    try:
        spec = load_scenario(args.scenario, args.scale)
        report = run(spec, FILTER_MODES[args.filter_mode], args.seed, args.inject_mismatch)
    except (ScenarioError, RunError, TopologyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        emit(report, args.format, args.out, None if args.out else sys.stdout.buffer)
    except OSError as e:
        print(f"error: cannot write report: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    sys.stdout.flush()
    if args.figures:
        from .plotting import render_figures

        for path in render_figures(report, args.figures):
            print(f"figure: {path}", file=sys.stderr)
    if report.failures:
        print(f"cross-check failed on {len(report.failures)} count(s):", file=sys.stderr)
        for c in report.failures:
            print(f"  device={c.device} metric={c.metric} analytic={c.analytic} concrete={c.concrete}",
                  file=sys.stderr)
        if args.strict_crosscheck:
            return EXIT_CROSSCHECK
    return EXIT_OK


def _cmd_bench(args) -> int:
    from .bench import run_bench

    res = run_bench(args.packets, args.alpha, args.seed)
    print("# informational only; no acceptance threshold")
    for k, v in res.items():
        print(f"{k} = {v:.0f}" if isinstance(v, float) and k.endswith("pps") else f"{k} = {v}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "bench":
        return _cmd_bench(args)
    print("\n".join(bundled_fixtures()))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
