"""Command-line front end: ``bscoal {simulate,oracle,stable,experiment,version}``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from contextlib import contextmanager

import numpy as np

from bscoal import __version__
from bscoal.errors import DataError, DomainError, InvariantError, QuadratureError, ResourceError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_VERDICT = 3

EPILOG = """\
exit codes:
  0  success
  1  runtime, resource or I/O failure
  2  usage error (bad flags, invalid config or arguments)
  3  experiment finished but at least one trend verdict failed

environment:
  BS_COALESCENT_THREADS  worker threads when --threads is not given
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@contextmanager
def _open_out(path):
    if path is None or path == "-":
        yield sys.stdout
        return
    try:
        fh = open(path, "w", newline="", encoding="ascii")
    except OSError as exc:
        raise OSError(f"cannot open {path} for writing: {exc.strerror}") from exc
    with fh:
        yield fh


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def cmd_simulate(args) -> int:
    from bscoal.experiments import save_csv, simulate_table, write_csv
    from bscoal.lengths import simulate_lengths

    threads = _threads(args)
    table = simulate_table(args.n, args.replicas, args.seed, args.mu, threads=threads)
    if args.out in (None, "-"):
        write_csv([table], sys.stdout)
    else:
        save_csv([table], args.out)
    if args.trace:
        # replays replica 0 from its own seed with the per-event trace on
        from bscoal.experiments import replica_rng
        s = simulate_lengths(replica_rng(table.seeds[0]), args.n, mu=args.mu, trace=True,
                             coupling=True)
        tr = s.trace
        with _open_out(args.trace) as fh:
            fh.write("k,X,Z,Y,hold\n")
            for k in range(len(tr.states)):
                hold = "%.17g" % tr.holds[k] if k < len(tr.holds) else ""
                fh.write(f"{k},{tr.states[k]},{tr.external[k]},{tr.internal[k]},{hold}\n")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from bscoal.oracle import oracle_table

    table = oracle_table(args.n)
    with _open_out(args.out) as fh:
        json.dump(table.to_dict(), fh, indent=2)
        fh.write("\n")
    return EXIT_OK


def cmd_stable(args) -> int:
    from bscoal.stable import default_law, sample_z

    if args.sample is not None:
        z = sample_z(np.random.default_rng(args.seed), args.sample)
        with _open_out(args.out) as fh:
            fh.writelines("%.17g\n" % v for v in z)
        return EXIT_OK
    if args.quantile is not None:
        for p in args.quantile:
            if not 0.0 < p < 1.0:
                raise UsageError(f"quantile needs 0 < p < 1, got {p}")
    law = default_law()
    lines = []
    for x in args.cdf or []:
        lines.append("%.17g" % law.cdf(x))
    for x in args.pdf or []:
        lines.append("%.17g" % law.pdf(x))
    for p in args.quantile or []:
        lines.append("%.17g" % law.quantile(p))
    with _open_out(args.out) as fh:
        fh.writelines(line + "\n" for line in lines)
    return EXIT_OK


def cmd_experiment(args) -> int:
    from bscoal.experiments import (
        ExperimentConfig, convergence_report, run_experiment, save_csv, save_report,
    )

    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
    overrides = {
        "n_values": args.n_values, "replicas": args.replicas, "master_seed": args.seed,
        "mu": args.mu, "gamma_values": args.gamma, "output": args.out,
        "report": args.report, "slack": args.slack, "threads": args.threads,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if "threads" not in data:
        data["threads"] = _threads(args)
    try:
        config = ExperimentConfig.from_dict(data)
    except (DomainError, TypeError) as exc:
        raise UsageError(f"invalid experiment config: {exc}") from exc

    def progress(n):
        if not args.quiet:
            print(f"n={n}: {config.replicas} replicas", file=sys.stderr)

    result = run_experiment(config, progress)
    if config.output:
        save_csv(result, config.output)
    try:
        report = convergence_report(result)
    except DataError as exc:
        report = {"version": __version__, "config": config.to_dict(), "all_pass": False,
                  "guard": str(exc), "verdicts": {}}
    if config.report:
        save_report(report, config.report)
    else:
        json.dump(report, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return EXIT_OK if report["all_pass"] else EXIT_VERDICT


def cmd_version(args) -> int:
    print(f"bscoal {__version__}")
    return EXIT_OK


def _threads(args) -> int:
    from bscoal.experiments import resolve_threads
    try:
        return resolve_threads(getattr(args, "threads", None))
    except ValueError as exc:
        raise UsageError(f"bad thread count: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bscoal", description="Bolthausen-Sznitman coalescent toolkit.",
                epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate replicas and write CSV", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--n", type=_positive_int, required=True, help="sample size")
    s.add_argument("--replicas", type=_positive_int, default=1)
    s.add_argument("--seed", type=_seed, default=0, help="master seed")
    s.add_argument("--mu", type=_nonneg_float, help="mutation rate; omit for no mutations")
    s.add_argument("--trace", metavar="PATH", help="per-event trace of replica 0 as CSV")
    s.add_argument("--out", help="output CSV path (default stdout)")
    s.add_argument("--threads", type=_positive_int)
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="exact expectations by dynamic programming")
    o.add_argument("--n", type=_positive_int, required=True)
    o.add_argument("--out", help="output JSON path (default stdout)")
    o.set_defaults(func=cmd_oracle)

    st = sub.add_parser("stable", help="stable limit law numerics")
    st.add_argument("--cdf", type=float, nargs="+", metavar="X")
    st.add_argument("--pdf", type=float, nargs="+", metavar="X")
    st.add_argument("--quantile", type=float, nargs="+", metavar="P")
    st.add_argument("--sample", type=_positive_int, metavar="N")
    st.add_argument("--seed", type=_seed, default=0)
    st.add_argument("--out")
    st.set_defaults(func=cmd_stable)

    e = sub.add_parser("experiment", help="convergence experiment over an n-grid",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    e.add_argument("--config", help="JSON config; flags override its values")
    e.add_argument("--n-values", type=_positive_int, nargs="+")
    e.add_argument("--replicas", type=_positive_int)
    e.add_argument("--seed", type=_seed)
    e.add_argument("--mu", type=_nonneg_float)
    e.add_argument("--gamma", type=float, nargs="+")
    e.add_argument("--slack", type=float)
    e.add_argument("--out", help="replica CSV path")
    e.add_argument("--report", help="report JSON path (default stdout)")
    e.add_argument("--threads", type=_positive_int)
    e.add_argument("--quiet", action="store_true")
    e.set_defaults(func=cmd_experiment)

    v = sub.add_parser("version", help="print the build identifier")
    v.set_defaults(func=cmd_version)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "stable" and not any(
                [args.cdf, args.pdf, args.quantile, args.sample is not None]):
            parser.error("stable needs one of --cdf, --pdf, --quantile, --sample")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"bscoal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ResourceError, QuadratureError, InvariantError, OSError) as exc:
        print(f"bscoal: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
