"""Command line: ``sortgp {evolve,run,density,suite,audit} ...``.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from typing import Optional, Sequence

import numpy as np

from .density import (
    DensityBudgetExceeded,
    LengthCollectionError,
    estimate_conditional_density,
    estimate_density,
    working_length_distribution,
)
from .evolution import SINGLE_METRIC, TWO_PHASE, run_evolution, run_experiment, run_single_metric
from .experiment import (
    ALL_PROTOCOLS,
    CSV_COLUMNS,
    DENSITY_PROTOCOLS,
    ExperimentSpec,
    audit_csv,
    format_row,
    job_seed,
    run_suite,
)

# full-scale replication; hours to days of CPU time
FULL_PROFILE = dict(v_range=(2, 10), evolutions=100, min_hits=100)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _vars(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("..")
    try:
        a = int(lo)
        b = int(hi) if sep else a
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B or A, got {text!r}") from None
    if not 1 <= a <= b:
        raise argparse.ArgumentTypeError(f"variable range must satisfy 1 <= A <= B, got {text!r}")
    return a, b


def _metric(text: str) -> str:
    if text not in ("f2", "f3"):
        raise argparse.ArgumentTypeError(f"unknown metric {text!r} (choose f2 or f3)")
    return text


def _protocols(text: str) -> tuple[str, ...]:
    items = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in items if p not in ALL_PROTOCOLS]
    if bad or not items:
        raise argparse.ArgumentTypeError(
            f"unknown protocol {', '.join(bad) or text!r}; choose from {', '.join(ALL_PROTOCOLS)}")
    return items


def _at_least(lo: int, name: str):
    def conv(text: str) -> int:
        try:
            val = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if val < lo:
            raise argparse.ArgumentTypeError(f"{name} must be >= {lo}")
        return val
    return conv


def _probability(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("probability must be a number") from None
    if not 0.0 <= val <= 1.0:
        raise argparse.ArgumentTypeError("probability must be in [0, 1]")
    return val


def _build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--vars", type=_vars, help="writable variable count, A or A..B")
    common.add_argument("--metric", type=_metric, default="f2")
    common.add_argument("--protocol", type=_protocols,
                        help=f"comma-separated subset of {', '.join(ALL_PROTOCOLS)}")
    common.add_argument("--evolutions", type=_at_least(1, "evolutions"))
    common.add_argument("--population", type=_at_least(1, "population"), default=1000)
    common.add_argument("--tournament", type=_at_least(1, "tournament"), default=7)
    common.add_argument("--mutation-prob", type=_probability, default=0.2)
    common.add_argument("--steady-gens", type=_at_least(0, "steady-gens"), default=10)
    common.add_argument("--max-generations", type=_at_least(0, "max-generations"), default=20000)
    common.add_argument("--min-hits", type=_at_least(1, "min-hits"))
    common.add_argument("--max-samples", type=_at_least(1, "max-samples"))
    common.add_argument("--batch-size", type=_at_least(1, "batch-size"), default=20000)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=_at_least(1, "workers"), default=1)
    common.add_argument("--out", help="output directory (default $SORTGP_OUT or ./results)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = _Parser(prog="sortgp", description="Evolve sorting programs and measure "
                     "how rare working programs are.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("evolve", parents=[common], help="one evolution, logging every generation")
    sub.add_parser("run", parents=[common], help="one run of evolutions, summarised by medians")
    sub.add_parser("density", parents=[common], help="one density estimate")
    suite = sub.add_parser("suite", parents=[common], help="protocols across a range of v")
    suite.add_argument("--profile", choices=("desk", "full"), default="desk")
    suite.add_argument("--resume", action="store_true")
    audit = sub.add_parser("audit", help="recompute K columns of a results CSV")
    audit.add_argument("csv_path")
    return parser


def parse_cli(arguments: Sequence[str]):
    """Parse arguments into an ExperimentSpec (or a path for ``audit``).

    Raises UsageError with a diagnostic on bad input.
    """
    args = _build_parser().parse_args(list(arguments))
    if args.command == "audit":
        return args.csv_path

    fields: dict = dict(command=args.command, metric=args.metric, seed=args.seed,
                        workers=args.workers, out=args.out, format=args.format,
                        population=args.population, tournament=args.tournament,
                        mutation_prob=args.mutation_prob, steady_gens=args.steady_gens,
                        max_generations=args.max_generations, batch_size=args.batch_size,
                        max_samples=args.max_samples, verbose=args.verbose)
    if args.command == "suite":
        fields["resume"] = args.resume
        if args.profile == "full":
            fields.update(FULL_PROFILE)
            fields["protocols"] = ALL_PROTOCOLS
    if args.vars is not None:
        fields["v_range"] = args.vars
    if args.protocol is not None:
        fields["protocols"] = args.protocol
    if args.evolutions is not None:
        fields["evolutions"] = args.evolutions
    if args.min_hits is not None:
        fields["min_hits"] = args.min_hits

    if args.command in ("evolve", "run", "density"):
        lo, hi = fields.setdefault("v_range", (2, 2))
        if lo != hi:
            raise UsageError(f"{args.command} takes a single --vars value")
        protocols = fields.get("protocols")
        if protocols is not None and len(protocols) != 1:
            raise UsageError(f"{args.command} takes a single --protocol")
        if args.command == "density":
            fields.setdefault("protocols", ("density-d1",))
            if fields["protocols"][0] not in DENSITY_PROTOCOLS:
                raise UsageError("density needs a density-* protocol")
        else:
            fields.setdefault("protocols", (TWO_PHASE,))
            if fields["protocols"][0] not in (TWO_PHASE, SINGLE_METRIC):
                raise UsageError(f"{args.command} needs two-phase or single-metric")
        if args.command == "evolve":
            fields["evolutions"] = 1
    if fields["population"] < fields["tournament"]:
        raise UsageError("population must be at least the tournament size")
    try:
        return ExperimentSpec(**fields)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _cmd_evolve(spec: ExperimentSpec) -> None:
    v = spec.v_range[0]
    config = spec.config(v, spec.seed)

    def on_record(rec):
        print(json.dumps(rec), flush=True)

    if spec.protocols[0] == SINGLE_METRIC:
        result = run_single_metric(config, on_record=on_record)
    else:
        result = run_evolution(config, on_record=on_record)
    print(json.dumps({"result": asdict(result)}))


def _cmd_run(spec: ExperimentSpec) -> None:
    v = spec.v_range[0]
    summary = run_experiment(spec.config(v, spec.seed), spec.evolutions, spec.protocols[0],
                             workers=spec.workers, verbose=spec.verbose)
    if spec.format == "json":
        _emit(summary.to_dict())
        return
    row = {"v": v, "metric": spec.metric, "protocol": spec.protocols[0], "G1": summary.G1,
           "G2": summary.G2, "G2prime": summary.G2_prime, "evolutions": spec.evolutions,
           "seed": spec.seed}
    _write_rows([row])


def _cmd_density(spec: ExperimentSpec) -> None:
    v = spec.v_range[0]
    protocol = spec.protocols[0]
    lseed = job_seed(spec.seed, v, "lengths")
    dist = working_length_distribution(spec.config(v, lseed), spec.n_working,
                                       np.random.default_rng(lseed),
                                       passes=spec.length_passes, batch_size=spec.batch_size)
    hits = spec.hits_for(v, protocol)
    rng = np.random.default_rng(job_seed(spec.seed, v, protocol))
    common = dict(min_hits=hits, rng=rng, batch_size=spec.batch_size,
                  max_samples=spec.max_samples)
    if protocol == "density-d2prime":
        est = estimate_conditional_density(dist, v, **common)
        col = "D2prime"
    else:
        est = estimate_density("f1" if protocol == "density-d1" else "f2", dist, v, **common)
        col = "D1" if protocol == "density-d1" else "D2"
    if spec.format == "json":
        _emit({"v": v, "protocol": protocol, "estimate": asdict(est),
                     "length_distribution": dist.to_dict()})
        return
    _write_rows([{"v": v, "metric": spec.metric, "protocol": protocol, col: est.density,
                  "min_hits": hits, "seed": spec.seed}])


def _write_rows(rows) -> None:
    writer = csv.DictWriter(sys.stdout, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(format_row(row))


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        parsed = parse_cli(argv)
    except UsageError as exc:
        print(f"sortgp: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if getattr(parsed, "verbose", False) else logging.WARNING,
        format="%(message)s", stream=sys.stderr)
    try:
        if isinstance(parsed, str):
            problems = audit_csv(parsed)
            for p in problems:
                print(p)
            return 2 if problems else 0
        if parsed.command == "evolve":
            _cmd_evolve(parsed)
        elif parsed.command == "run":
            _cmd_run(parsed)
        elif parsed.command == "density":
            _cmd_density(parsed)
        else:
            rows = run_suite(parsed)
            _write_rows(rows)
    except (DensityBudgetExceeded, LengthCollectionError, OSError, RuntimeError) as exc:
        print(f"sortgp: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
