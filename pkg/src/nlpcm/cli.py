"""Command-line entry point: ``nlpcm run | list-cases | check | slope``.

Exit codes: 0 success, 1 configuration error, 2 invariant violation or
solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import __version__
from .errors import ConfigError, NlpcmError

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2

def _cmd_run(args) -> int:
    from .harness.experiment import ExperimentConfig, run_case

    cfg = ExperimentConfig.from_json(args.config)
    over = {}
    if args.output:
        over["output"] = args.output
    if args.no_timing:
        over["timing"] = False
    if args.dump_dir:
        over["dump_dir"] = args.dump_dir
    if args.dump:
        over["dump"] = tuple(k.strip() for k in args.dump.split(",") if k.strip())
    if args.cache_dir:
        over["cache_dir"] = args.cache_dir
    if over:
        cfg = replace(cfg, **over).resolved()
    report = run_case(cfg)
    if not cfg.output:
        sys.stdout.write(report.to_csv())
    against = "h" if cfg.delta[0] == "fixed" else "delta"
    pcm = [r for r in report.rows if r.eta != "mc"]
    if len({r.h for r in pcm}) >= 3:
        for name, fit in report.slopes(against).items():
            print(f"slope {name} vs {against}: {fit.slope:.3f} +/- {fit.band:.3f}", file=sys.stderr)
    return EXIT_OK


def _cmd_list(args) -> int:
    from .harness.cases import CASE_NAMES, get_case

    for name in CASE_NAMES:
        c = get_case(name)
        rule = f"{c.delta_rule[0]} {c.delta_rule[1]:g}"
        if args.json:
            continue
        print(f"{name:20s} d={c.dim} N={c.n_params} delta {rule:12s} ref={c.reference:8s} "
              f"{c.description}")
    if args.json:
        out = []
        for name in CASE_NAMES:
            c = get_case(name)
            out.append({"case": name, "dim": c.dim, "n_params": c.n_params,
                        "delta": {c.delta_rule[0]: c.delta_rule[1]},
                        "distributions": sorted(c.distributions), "reference": c.reference,
                        "h": list(c.default_h), "eta": list(c.default_eta),
                        "domain": c.domain.to_dict()})
        print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_check(args) -> int:
    from .harness.checks import run_checks

    results = run_checks(seed=args.seed, instances=args.instances)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_INVARIANT if failed else EXIT_OK


def _cmd_slope(args) -> int:
    from .harness.experiment import ConvergenceReport

    try:
        report = ConvergenceReport.from_csv(args.input)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read report {args.input}: {exc}") from None
    groups = {}
    for r in report.rows:
        if r.eta == "mc" or (args.eta is not None and r.eta != args.eta):
            continue
        groups.setdefault((r.case, r.eta), []).append(r)
    if not groups:
        raise ConfigError("no PCM rows to fit")
    print("case,eta,against,quantity,slope,band,n")
    for (case, eta), rows in groups.items():
        if len(rows) < 3:
            print(f"{case},{eta},{args.against},-,insufficient points,,{len(rows)}")
            continue
        sub = ConvergenceReport(rows)
        for name, fit in sub.slopes(args.against, eta).items():
            print(f"{case},{eta},{args.against},{name},{fit.slope:.6f},{fit.band:.6f},{fit.n}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; 2 is reserved for failed invariants
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nlpcm", description="Stochastic nonlocal diffusion: "
                                "meshfree quadrature with sparse-grid collocation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one convergence study from a JSON config")
    r.add_argument("--config", required=True, help="JSON file with the experiment config")
    r.add_argument("--output", help="CSV report path (default: stdout)")
    r.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 for "
                   "byte-identical reports")
    r.add_argument("--dump-dir", help="directory for grid/weights/plan/eigs/solutions dumps")
    r.add_argument("--dump", help="comma list from grid,weights,plan,eigs,solutions")
    r.add_argument("--cache-dir", help="cache for derived forcings and local references")
    r.set_defaults(func=_cmd_run)

    l = sub.add_parser("list-cases", help="list the registered cases")
    l.add_argument("--json", action="store_true")
    l.set_defaults(func=_cmd_list)

    c = sub.add_parser("check", help="run the invariant suite")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--instances", type=int, default=200,
                   help="randomized maximum-principle instances per geometry")
    c.set_defaults(func=_cmd_check)

    s = sub.add_parser("slope", help="fit convergence slopes from a report CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--against", choices=("h", "delta"), default="h")
    s.add_argument("--eta", type=int, default=None)
    s.set_defaults(func=_cmd_slope)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NlpcmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
