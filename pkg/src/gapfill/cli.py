"""Command-line front end: ``gapfill {synth,inject,fill,search,bench}``.

Exit codes: 0 success, 1 usage error, 2 data or method error. Every output
file is written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from gapfill.baselines import BASELINE_FILLERS, FillerConfig
from gapfill.benchmark import (
    METHODS,
    BenchConfig,
    aggregate_reports,
    build_report,
    plot_data_csv,
    run_synthetic_benchmark,
)
from gapfill.bidir import EnsembleCombiner, GapFillPolicy, fill_bidirectional
from gapfill.errors import GapFillError
from gapfill.evo import EvoConfig, run_search, trace_to_csv
from gapfill.lag_models import default_window
from gapfill.pipeline import pipeline_from_json, pipeline_to_json
from gapfill.series import TimeSeries, atomic_write_text, format_value, read_csv, write_csv
from gapfill.synth import GapSpec, SyntheticSpec, generate, inject_gaps

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _announce(command: str, **config) -> None:
    print(json.dumps({"command": command, **config}, sort_keys=True, default=str))


def _threads(args) -> int:
    return args.threads or os.cpu_count() or 1


def _read_mask(path, n_expected: int, header: bool) -> np.ndarray:
    flags = read_csv(path, header=header).values
    if flags.size != n_expected:
        raise GapFillError(f"mask has {flags.size} rows, series has {n_expected}")
    if not np.isin(flags, (0.0, 1.0)).all():
        raise GapFillError("mask values must be 0 or 1")
    return flags == 1.0


def _mask_csv(mask: np.ndarray, origin: int) -> str:
    return "".join(f"{origin + i},{int(v)}\n" for i, v in enumerate(mask))


def cmd_synth(args) -> None:
    spec = SyntheticSpec(
        n=args.n, t1=args.t1, t2=args.t2, break_point=args.break_point,
        noise_mean=args.mu, noise_var=args.sigma2, rng_seed=args.seed,
    )
    _announce("synth", spec=asdict(spec), resolved_break=spec.resolved_break)
    write_csv(generate(spec), args.out)


def cmd_inject(args) -> None:
    series = read_csv(args.input, header=args.header)
    if series.n_missing:
        raise GapFillError("inject expects a complete series")
    spec = GapSpec(total_fraction=args.fraction, long_gap_length=args.long_gap,
                   rng_seed=args.seed)
    length, start, margin = spec.resolve(len(series))
    _announce("inject", spec=asdict(spec), long_gap_start=start,
              long_gap_length=length, margin=margin)
    gapped, mask = inject_gaps(series, spec)
    write_csv(gapped, args.out)
    if args.mask_out:
        atomic_write_text(args.mask_out, _mask_csv(mask, series.origin_index))


def _evo_config(args) -> EvoConfig:
    return EvoConfig(population_size=args.population, generations=args.generations,
                     rng_seed=args.seed)


def cmd_fill(args) -> None:
    series = read_csv(args.input, header=args.header)
    method = args.method
    if method in BASELINE_FILLERS:
        if args.pipeline or args.combiner != "ramp" or args.w1 or args.w2:
            raise UsageError(f"--pipeline/--combiner/--w1/--w2 do not apply to {method}")
        _announce("fill", method=method, filler=asdict(FillerConfig()))
        write_csv(BASELINE_FILLERS[method](series), args.out)
        return
    w = args.w or default_window(len(series))
    policy = GapFillPolicy.default(w, args.w1, args.w2)
    if args.pipeline:
        source = pipeline_from_json(Path(args.pipeline).read_text())
    elif method == "automl-bidir":
        source = _evo_config(args)
    else:
        source = "single_ridge"
    _announce(
        "fill", method=method, policy=asdict(policy), combiner=args.combiner,
        model_source=source if isinstance(source, str) else
        (asdict(source) if isinstance(source, EvoConfig) else source.to_dict()),
        threads=_threads(args),
    )
    filled = fill_bidirectional(
        series, policy=policy, combiner=EnsembleCombiner(args.combiner),
        model_source=source, direction="forward" if method == "ridge-forward" else "both",
        threads=_threads(args),
    )
    write_csv(filled, args.out)


def cmd_search(args) -> None:
    series = read_csv(args.input, header=args.header)
    w = args.w or default_window(len(series))
    config = _evo_config(args)
    _announce("search", config=asdict(config), w=w, threads=_threads(args))
    result = run_search(series, w, config, threads=_threads(args))
    print(f"best fitness {format_value(result.best_fitness)}: {result.best.canonical()}")
    if args.out_pipeline:
        atomic_write_text(args.out_pipeline, pipeline_to_json(result.best))
    if args.out_trace:
        atomic_write_text(args.out_trace, trace_to_csv(result.trace))


def _bench_config(args) -> BenchConfig:
    evo = EvoConfig(population_size=args.population, generations=args.generations,
                    rng_seed=args.seed)
    return BenchConfig(w=args.w, evo=evo, combiner=args.combiner, tail=args.tail,
                       threads=_threads(args))


def cmd_bench(args) -> None:
    methods = args.methods.split(",") if args.methods else list(METHODS)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown method(s): {', '.join(unknown)}")
    config = _bench_config(args)
    if args.synth_defaults:
        if args.clean or args.gapped or args.mask:
            raise UsageError("--synth-defaults excludes --clean/--gapped/--mask")
        seeds = list(range(args.seed, args.seed + args.seeds))
        _announce("bench", seeds=seeds, methods=methods, config=config.to_dict(),
                  synthetic=asdict(SyntheticSpec()), gap_spec=asdict(GapSpec()))
        reports = [run_synthetic_benchmark(s, methods, config) for s in seeds]
    else:
        if not (args.clean and args.gapped and args.mask):
            raise UsageError("bench needs --clean, --gapped and --mask, or --synth-defaults")
        if args.seeds != 1:
            raise UsageError("--seeds only applies with --synth-defaults")
        clean = read_csv(args.clean, header=args.header)
        gapped = read_csv(args.gapped, header=args.header)
        if len(clean) != len(gapped):
            raise GapFillError("clean and gapped series differ in length")
        mask = _read_mask(args.mask, len(clean), args.header)
        _announce("bench", seeds=[args.seed], methods=methods, config=config.to_dict())
        report = build_report(clean, gapped, mask, methods, config,
                              metadata={"seed": args.seed})
        report.clean, report.mask = clean, mask
        reports = [report]
    final = reports[0] if len(reports) == 1 else aggregate_reports(reports)
    csv_text = final.to_csv()
    sys.stdout.write(csv_text)
    if args.report:
        report_path = Path(args.report)
        json_path = Path(args.report_json) if args.report_json else report_path.with_suffix(".json")
        if json_path == report_path:
            raise UsageError("--report and the JSON report path coincide; pass --report-json")
        atomic_write_text(report_path, csv_text)
        atomic_write_text(json_path, final.to_json())
    if args.plot_data:
        atomic_write_text(args.plot_data, plot_data_csv(reports))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gapfill", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, threads=False):
        p.add_argument("--header", action="store_true", help="input CSVs carry a header row")
        if threads:
            p.add_argument("--threads", type=int, default=None,
                           help="worker threads (default: available cores)")

    p = sub.add_parser("synth", help="generate a synthetic series with a regime break")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--t1", type=float, default=1.0)
    p.add_argument("--t2", type=float, default=2.5)
    p.add_argument("--break", dest="break_point", type=int, default=None,
                   help="break index (default n//2)")
    p.add_argument("--mu", type=float, default=0.0, help="noise mean")
    p.add_argument("--sigma2", type=float, default=0.01, help="noise variance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inject", help="remove a long central gap plus random segments")
    common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--fraction", type=float, default=0.3)
    p.add_argument("--long-gap", type=int, default=None,
                   help="long gap length (default round(n/4.18))")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out", default=None, help="CSV of index,1 for removed samples")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("fill", help="fill every gap with one method")
    common(p, threads=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--out", required=True)
    p.add_argument("--w", type=int, default=None, help="lag window")
    p.add_argument("--w1", type=int, default=None, help="pre-history length")
    p.add_argument("--w2", type=int, default=None, help="post-history length")
    p.add_argument("--combiner", choices=("ramp", "learned"), default="ramp")
    p.add_argument("--pipeline", default=None, help="pipeline JSON saved by search")
    p.add_argument("--seed", type=int, default=0, help="search seed for automl-bidir")
    p.add_argument("--generations", type=int, default=15)
    p.add_argument("--population", type=int, default=20)
    p.set_defaults(func=cmd_fill)

    p = sub.add_parser("search", help="evolve a pipeline on a gapped series")
    common(p, threads=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--generations", type=int, default=15)
    p.add_argument("--population", type=int, default=20)
    p.add_argument("--w", type=int, default=None, help="lag window")
    p.add_argument("--out-pipeline", default=None)
    p.add_argument("--out-trace", default=None)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("bench", help="restoration and forecast-impact benchmark")
    common(p, threads=True)
    p.add_argument("--clean", default=None)
    p.add_argument("--gapped", default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--synth-defaults", action="store_true",
                   help="generate and gap the default synthetic series per seed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1,
                   help="number of consecutive seeds; reports mean (JSON adds std)")
    p.add_argument("--methods", default=None, help="comma-separated subset of methods")
    p.add_argument("--w", type=int, default=None)
    p.add_argument("--combiner", choices=("ramp", "learned"), default="ramp")
    p.add_argument("--tail", type=int, default=None, help="forecast horizon for impact scoring")
    p.add_argument("--generations", type=int, default=15)
    p.add_argument("--population", type=int, default=20)
    p.add_argument("--report", default=None, help="CSV report path; JSON goes next to it")
    p.add_argument("--report-json", default=None)
    p.add_argument("--plot-data", default=None, help="per-sample fill traces CSV")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if getattr(args, "seeds", 1) < 1 or (getattr(args, "threads", None) or 1) < 1:
            raise UsageError("--seeds and --threads must be positive")
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gapfill: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GapFillError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"gapfill: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
