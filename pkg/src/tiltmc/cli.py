"""Batch command-line front end.

Subcommands:

* ``price <config>`` -- run one config and print a human-readable report
  per mode.
* ``experiment <name|config>`` -- run a builtin parameter grid (or a config
  file) and emit one row per parameter set per mode, as aligned text or CSV.
* ``coverage <config|name>`` -- replicate a pipeline with distinct stream
  ids and report how often the interval contains the reference price.

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical
failures (``price`` and ``coverage``; ``experiment`` batches record row
failures inline in the output and keep going). ``TILTMC_SEED`` and
``TILTMC_THREADS`` override the seed and worker count when the flags are
absent. Rows are dispatched to worker threads but emitted in config order.
CSV omits the wall-time column unless ``--timings`` is given, so
equal-seed runs emit byte-identical files regardless of thread count.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import (
    BUILTIN_NAMES,
    ExperimentRow,
    ExperimentSpec,
    builtin_experiment,
    parse_config,
    with_overrides,
)
from .errors import ConfigError, TiltmcError
from .estimate import CoverageResult, EstimateReport, coverage_experiment, run_pipeline
from .gaussian import RngStream, draw_samples, normal_draws
from .oracles import bs_call_price, bs_digital_price, bs_put_price
from .payoffs import BlackScholesMulti, Digital, VanillaCall, VanillaPut

__all__ = ["main", "run_experiment", "emit_report", "reference_price"]

_REFERENCE_STREAM_ID = 999_983  # reserved; replication ids stay well below


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    label: str
    report: EstimateReport | None
    error: str | None = None


def run_experiment(
    name: str, rows: list[ExperimentRow], *, threads: int = 1, record_failures: bool = True
) -> list[ResultRow]:
    """Run every (parameter row, mode) pipeline and keep config order.

    Each parameter row draws one sample block on its own stream id (the row
    index), shared by all its modes; rows run concurrently when threads > 1.
    Numerical failures are recorded inline as error rows and the batch
    continues, unless ``record_failures`` is False.
    """

    def run_row(index_row):
        index, row = index_row
        spec = row.spec
        payoff = spec.payoff()
        drift = spec.drift()
        block = draw_samples(RngStream(spec.seed, index), spec.n, payoff.dim)
        results = []
        for mode in spec.modes:
            try:
                report = run_pipeline(block, payoff, mode, drift, level=spec.level)
            except TiltmcError as exc:
                if not record_failures:
                    raise
                results.append(
                    ResultRow(experiment=name, label=row.label, report=None, error=f"{mode}: {exc}")
                )
                continue
            results.append(ResultRow(experiment=name, label=row.label, report=report))
        return results

    tasks = list(enumerate(rows))
    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            nested = list(pool.map(run_row, tasks))
    else:
        nested = [run_row(task) for task in tasks]
    return [item for chunk in nested for item in chunk]


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def emit_report(rows: list[ResultRow], fmt: str, *, timings: bool = False) -> str:
    """Render result rows as aligned text or CSV.

    CSV uses a header row, '.' decimal separator and 17 significant digits,
    so re-parsing reproduces every float bit-exactly.
    """
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        header = ["experiment", "row"] + EstimateReport.csv_header()
        if timings:
            header.append("wall_time")
        header.append("error")
        writer.writerow(header)
        for row in rows:
            if row.report is None:
                record = [row.experiment, row.label] + [""] * len(EstimateReport.csv_header())
                if timings:
                    record.append("")
                record.append(row.error or "failed")
            else:
                record = [row.experiment, row.label] + row.report.to_csv_row()
                if timings:
                    record.append(_fmt17(row.report.wall_time))
                record.append("")
            writer.writerow(record)
        return buffer.getvalue()

    header = ["row", "mode", "n", "price", "variance", "ci_low", "ci_high", "iters", "time_s"]
    table = [header]
    for row in rows:
        rep = row.report
        if rep is None:
            table.append([row.label, "ERROR", row.error or "failed", "", "", "", "", "", ""])
            continue
        table.append(
            [
                row.label,
                rep.mode + ("*" if rep.fallback else ""),
                str(rep.n),
                f"{rep.price:.6f}",
                f"{rep.variance:.6f}" + ("c" if rep.variance_clamped else ""),
                f"{rep.ci_low:.6f}",
                f"{rep.ci_high:.6f}",
                str(rep.iterations),
                f"{rep.wall_time:.3f}",
            ]
        )
    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in table]
    return "\n".join(lines) + "\n"


def reference_price(spec: ExperimentSpec, *, n_ref: int = 2_000_000) -> float:
    """Reference value for coverage runs: closed form when available,
    otherwise an untilted estimate on a reserved high-n stream."""
    model, claim = spec.model, spec.claim
    if isinstance(model, BlackScholesMulti) and model.n_assets == 1:
        spot = float(model.spot[0])
        vol = float(model.vol[0])
        rate, maturity = model.rate, model.maturity
        if isinstance(claim, Digital) and claim.above:
            return bs_digital_price(spot, claim.level, rate, vol, maturity)
        if isinstance(claim, VanillaCall):
            return bs_call_price(spot, claim.strike, rate, vol, maturity)
        if isinstance(claim, VanillaPut):
            return bs_put_price(spot, claim.strike, rate, vol, maturity)
    payoff = spec.payoff()
    stream = RngStream(spec.seed, _REFERENCE_STREAM_ID)
    chunk_rows = max(1, 1_000_000 // payoff.dim)
    total = 0.0
    done = 0
    while done < n_ref:
        m = min(chunk_rows, n_ref - done)
        draws = normal_draws(stream, m * payoff.dim, offset=done * payoff.dim)
        total += float(np.sum(payoff(draws.reshape(m, payoff.dim))))
        done += m
    return total / n_ref


def _coverage_rows(spec: ExperimentSpec, replications: int, threads: int):
    mode = spec.modes[0]
    reference = reference_price(spec)
    result = coverage_experiment(
        spec.payoff(),
        mode,
        spec.n,
        spec.seed,
        reference,
        replications=replications,
        drift=spec.drift(),
        level=spec.level,
        threads=threads,
    )
    return reference, mode, result


def _emit_coverage(
    name: str, label: str, mode: str, spec: ExperimentSpec,
    reference: float, result: CoverageResult, fmt: str,
) -> str:
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(
            ["experiment", "row", "mode", "n", "level", "replications",
             "hits", "failures", "empirical_level", "reference"]
        )
        writer.writerow(
            [name, label, mode, str(spec.n), _fmt17(spec.level), str(result.replications),
             str(result.hits), str(result.failures),
             _fmt17(result.empirical_level), _fmt17(reference)]
        )
        return buffer.getvalue()
    return (
        f"coverage of {name} [{label}] mode={mode} n={spec.n} level={spec.level}\n"
        f"reference        {reference:.6f}\n"
        f"replications     {result.replications} ({result.failures} failed)\n"
        f"hits             {result.hits}\n"
        f"empirical level  {result.empirical_level:.4f}\n"
    )


def _positive_int(value: str) -> int:
    parsed = int(value)
    if parsed < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return parsed


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiltmc",
        description="Adaptive importance-sampling Monte Carlo for Gaussian payoffs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--n", type=_positive_int, help="override sample count per run")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--modes", nargs="+", help="override the mode list")
        p.add_argument("--format", choices=("text", "csv"), help="output format")
        p.add_argument("--out", help="write the report to this file instead of stdout")
        p.add_argument("--threads", type=_positive_int, help="worker threads (default 1)")

    price = sub.add_parser("price", help="run a single config and print a report per mode")
    price.add_argument("config")
    common(price)

    experiment = sub.add_parser(
        "experiment",
        help=f"run a builtin grid ({', '.join(BUILTIN_NAMES)}) or a config file",
    )
    experiment.add_argument("target")
    common(experiment)
    experiment.add_argument(
        "--timings", action="store_true", help="include the wall-time column in CSV output"
    )

    coverage = sub.add_parser("coverage", help="replicate a pipeline and report CI coverage")
    coverage.add_argument("target")
    common(coverage)
    coverage.add_argument("--replications", type=_positive_int, help="number of replications")
    return parser


def _load_rows(target: str, args) -> tuple[str, list[ExperimentRow]]:
    overrides = dict(n=args.n, seed=args.seed, modes=tuple(args.modes) if args.modes else None)
    if target in BUILTIN_NAMES:
        return target, builtin_experiment(target, **overrides)
    spec = with_overrides(parse_config(target), **overrides)
    return target, [ExperimentRow(label="config", spec=spec)]


def _write(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.seed is None and os.environ.get("TILTMC_SEED"):
        args.seed = int(os.environ["TILTMC_SEED"])
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("TILTMC_THREADS", "1"))

    try:
        if args.command == "price":
            name, rows = _load_rows(args.config, args)
            spec = rows[0].spec
            fmt = args.format or spec.out_format
            results = run_experiment(name, rows, threads=threads, record_failures=False)
            if fmt == "csv":
                _write(emit_report(results, "csv"), args.out)
            else:
                blocks = [spec.describe()]
                blocks += [
                    f"--- {row.label} / {row.report.mode} ---\n{row.report.format_block()}"
                    for row in results
                ]
                _write("\n\n".join(blocks) + "\n", args.out)
            return 0

        if args.command == "experiment":
            name, rows = _load_rows(args.target, args)
            fmt = args.format or rows[0].spec.out_format
            results = run_experiment(name, rows, threads=threads)
            _write(emit_report(results, fmt, timings=args.timings), args.out)
            return 0

        # coverage
        name, rows = _load_rows(args.target, args)
        spec = rows[0].spec
        replications = args.replications or spec.replications
        if replications is None:
            raise ConfigError(
                "coverage needs --replications or a 'replications' key in [run]",
                field="replications",
            )
        reference, mode, result = _coverage_rows(spec, replications, threads)
        fmt = args.format or spec.out_format
        _write(_emit_coverage(name, rows[0].label, mode, spec, reference, result, fmt), args.out)
        return 0

    except (ConfigError, OSError) as exc:
        print(f"tiltmc: config error: {exc}", file=sys.stderr)
        return 2
    except TiltmcError as exc:
        print(f"tiltmc: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
