"""Restoration accuracy and forecast-impact benchmarks.

Restoration scores each filler by MAE/MAPE over the removed indices only.
Forecast impact trains the trend/residual forecasting chain on each restored
series minus its tail, forecasts the tail and reports how much the MAPE
grows relative to the same procedure on the clean series.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from gapfill.baselines import BASELINE_FILLERS, FillerConfig
from gapfill.bidir import EnsembleCombiner, GapFill, fill_bidirectional
from gapfill.errors import GapFillError
from gapfill.evo import EvoConfig
from gapfill.lag_models import default_window
from gapfill.pipeline import Pipeline, decomposition_chain, fit_pipeline
from gapfill.series import TimeSeries, as_series, format_value, scan_gaps
from gapfill.synth import GapSpec, SyntheticSpec, generate, inject_gaps

__all__ = [
    "METHODS",
    "MAPE_EPS",
    "MetricPair",
    "BenchConfig",
    "MethodRow",
    "BenchmarkReport",
    "mae",
    "mape",
    "mape_detail",
    "default_tail",
    "make_filler",
    "run_restoration_benchmark",
    "forecast_tail_mape",
    "run_forecast_impact",
    "run_synthetic_benchmark",
    "aggregate_reports",
]

logger = logging.getLogger(__name__)

METHODS = (
    "linear",
    "poly-local",
    "poly-batch",
    "moving-average",
    "spline",
    "kalman",
    "ridge-forward",
    "ridge-bidir",
    "automl-bidir",
)
ORIGINAL = "original"
MAPE_EPS = 1e-9
CSV_HEADER = "method,mae,mape,forecast_mape,deviation,status"


def _pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=float).reshape(-1)
    p = np.asarray(predicted, dtype=float).reshape(-1)
    if a.size == 0 or p.size == 0:
        raise ValueError("metrics need non-empty vectors")
    if a.size != p.size:
        raise ValueError(f"length mismatch: {a.size} vs {p.size}")
    return a, p


def mae(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    return float(np.mean(np.abs(a - p)))


def mape_detail(actual, predicted, eps: float = MAPE_EPS) -> tuple[float, int]:
    """MAPE in percent plus the number of near-zero actuals left out."""
    a, p = _pair(actual, predicted)
    keep = np.abs(a) > eps
    if not keep.any():
        raise ValueError("mape undefined: every actual value is within eps of zero")
    value = 100.0 * float(np.mean(np.abs(a[keep] - p[keep]) / np.abs(a[keep])))
    return value, int((~keep).sum())


def mape(actual, predicted, eps: float = MAPE_EPS) -> float:
    return mape_detail(actual, predicted, eps)[0]


@dataclass(frozen=True)
class MetricPair:
    mae: float
    mape: float
    mape_excluded: int = 0


@dataclass(frozen=True)
class BenchConfig:
    """Everything a benchmark run depends on besides the data."""

    w: int | None = None
    filler: FillerConfig = field(default_factory=FillerConfig)
    evo: EvoConfig = field(default_factory=EvoConfig)
    combiner: str = "ramp"
    tail: int | None = None
    forecast_alpha: float = 1.0
    threads: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")
        return d


@dataclass
class MethodRow:
    method: str
    status: str = "ok"
    metrics: MetricPair | None = None
    forecast_mape: float | None = None
    deviation: float | None = None
    restored: TimeSeries | None = field(default=None, repr=False)
    fills: list[GapFill] | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def sort_key(self):
        score = self.metrics.mae if self.metrics is not None else math.inf
        return (not self.ok, score, self.method)


def default_tail(n: int) -> int:
    """400 samples, scaled to ``round(0.064 * n)`` below 2000 samples."""
    return 400 if n >= 2000 else max(1, round(0.064 * n))


def make_filler(method: str, config: BenchConfig) -> Callable[..., TimeSeries]:
    """Callable ``(series, details=None) -> TimeSeries`` for a method name."""
    if method in BASELINE_FILLERS:
        base = BASELINE_FILLERS[method]
        return lambda series, details=None: base(series, config.filler)
    combiner = EnsembleCombiner(config.combiner)
    if method in ("ridge-forward", "ridge-bidir", "automl-bidir"):
        source = config.evo if method == "automl-bidir" else "single_ridge"
        direction = "forward" if method == "ridge-forward" else "both"

        def run(series, details=None):
            return fill_bidirectional(
                series, combiner=combiner, model_source=source, w=config.w,
                direction=direction, threads=config.threads, details=details,
            )
        return run
    raise ValueError(f"unknown method {method!r}")


def run_restoration_benchmark(
    clean: TimeSeries,
    gapped: TimeSeries,
    mask: np.ndarray,
    methods: Sequence[str] = METHODS,
    config: BenchConfig | None = None,
    fillers: Mapping[str, Callable[..., TimeSeries]] | None = None,
) -> list[MethodRow]:
    """Fill ``gapped`` with each method and score the removed indices.

    ``fillers`` may supply extra or replacement callables by name. A failing
    method yields a row with a ``failed: ...`` status instead of aborting.
    Rows come back sorted by MAE, failures last.
    """
    config = config or BenchConfig()
    clean, gapped = as_series(clean), as_series(gapped)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (len(gapped),) or len(clean) != len(gapped):
        raise ValueError("clean, gapped and mask must share one length")
    if not np.array_equal(np.isnan(gapped.values) & mask, mask):
        raise ValueError("mask marks samples that are present in the gapped series")
    fillers = dict(fillers or {})
    truth = clean.values[mask]
    rows = []
    for method in methods:
        fill = fillers.get(method) or make_filler(method, config)
        details: list[GapFill] = []
        try:
            restored = fill(gapped, details=details)
            if restored.n_missing:
                raise GapFillError("filler left missing values")
            predicted = restored.values[mask]
            value, excluded = mape_detail(truth, predicted)
            metrics = MetricPair(mae(truth, predicted), value, excluded)
        except (GapFillError, ValueError, np.linalg.LinAlgError) as exc:
            logger.warning("method %s failed: %s", method, exc)
            rows.append(MethodRow(method, status=f"failed: {exc}"))
            continue
        logger.info("method %s: mae=%.6g mape=%.6g", method, metrics.mae, metrics.mape)
        rows.append(MethodRow(method, metrics=metrics, restored=restored,
                              fills=details or None))
    rows.sort(key=MethodRow.sort_key)
    return rows


def forecast_tail_mape(series: TimeSeries, clean: TimeSeries, tail: int,
                       w: int | None = None, alpha: float = 1.0,
                       chain: Pipeline | None = None) -> float:
    """Fit the forecasting chain on ``series[:-tail]`` and score the tail of
    ``clean``."""
    series = as_series(series)
    n = len(series)
    w = w or default_window(n)
    train = series.replace(series.values[:-tail])
    if train.n_missing:
        raise GapFillError("training part of the series still has gaps")
    fitted = fit_pipeline(chain or decomposition_chain(alpha), train, w)
    forecast = fitted.forecast(train.values[-w:], tail)
    return mape(clean.values[-tail:], forecast)


def run_forecast_impact(
    clean: TimeSeries,
    restored_variants: Mapping[str, TimeSeries],
    tail: int | None = None,
    config: BenchConfig | None = None,
) -> dict[str, tuple[float | None, float | None, str]]:
    """Forecast MAPE and deviation from the clean-series MAPE per variant.

    Returns ``{name: (forecast_mape, deviation, status)}`` and always
    includes an ``"original"`` entry whose deviation is exactly zero.
    """
    config = config or BenchConfig()
    clean = as_series(clean)
    n = len(clean)
    tail = tail or config.tail or default_tail(n)
    if not 0 < tail < n / 2:
        raise ValueError(f"tail must satisfy 0 < tail < n/2 (tail={tail}, n={n})")

    def score(series):
        return forecast_tail_mape(series, clean, tail, config.w, config.forecast_alpha)

    base = score(clean)
    out: dict[str, tuple[float | None, float | None, str]] = {ORIGINAL: (base, base - base, "ok")}
    for name, series in restored_variants.items():
        try:
            value = score(series)
        except (GapFillError, ValueError, np.linalg.LinAlgError) as exc:
            out[name] = (None, None, f"failed: {exc}")
            continue
        out[name] = (value, value - base, "ok")
    return out


def _fmt(v: float | None) -> str:
    return "" if v is None else format_value(v)


@dataclass
class BenchmarkReport:
    rows: list[MethodRow]
    metadata: dict

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            m = r.metrics
            status = r.status.replace(",", ";").replace("\n", " ")
            lines.append(",".join([
                r.method,
                _fmt(m.mae if m else None),
                _fmt(m.mape if m else None),
                _fmt(r.forecast_mape),
                _fmt(r.deviation),
                status,
            ]))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "rows": [
                {
                    "method": r.method,
                    "mae": r.metrics.mae if r.metrics else None,
                    "mape": r.metrics.mape if r.metrics else None,
                    "mape_excluded": r.metrics.mape_excluded if r.metrics else None,
                    "forecast_mape": r.forecast_mape,
                    "deviation": r.deviation,
                    "status": r.status,
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def build_report(clean, gapped, mask, methods=METHODS, config: BenchConfig | None = None,
                 metadata: dict | None = None, fillers=None) -> BenchmarkReport:
    """Restoration rows plus forecast impact, merged into one report."""
    config = config or BenchConfig()
    rows = run_restoration_benchmark(clean, gapped, mask, methods, config, fillers)
    variants = {r.method: r.restored for r in rows if r.ok}
    impact = run_forecast_impact(clean, variants, config=config)
    for r in rows:
        if r.method in impact:
            r.forecast_mape, r.deviation, status = impact[r.method]
            if status != "ok":
                r.status = f"forecast {status}"
    base_mape, base_dev, _ = impact[ORIGINAL]
    rows.insert(0, MethodRow(ORIGINAL, metrics=MetricPair(0.0, 0.0, 0),
                             forecast_mape=base_mape, deviation=base_dev))
    meta = {
        "config": config.to_dict(),
        "methods": list(methods),
        "n": len(clean),
        "n_removed": int(np.asarray(mask).sum()),
        "n_gaps": len(scan_gaps(gapped)),
        "tail": config.tail or default_tail(len(clean)),
        "w": config.w or default_window(len(clean)),
    }
    meta.update(metadata or {})
    return BenchmarkReport(rows, meta)


def run_synthetic_benchmark(seed: int, methods: Sequence[str] = METHODS,
                            config: BenchConfig | None = None,
                            synth: SyntheticSpec | None = None,
                            gaps: GapSpec | None = None) -> BenchmarkReport:
    """Generate, gap and benchmark one synthetic series; ``seed`` drives the
    noise, the gap layout and the evolutionary search."""
    config = config or BenchConfig()
    synth = synth or SyntheticSpec()
    gaps = gaps or GapSpec()
    synth = SyntheticSpec(**{**asdict(synth), "rng_seed": seed})
    gaps = GapSpec(**{**asdict(gaps), "rng_seed": seed})
    evo = EvoConfig(**{**asdict(config.evo), "rng_seed": seed})
    config = BenchConfig(**{**_shallow(config), "evo": evo})
    clean = generate(synth)
    gapped, mask = inject_gaps(clean, gaps)
    report = build_report(
        clean, gapped, mask, methods, config,
        metadata={"seed": seed, "synthetic": asdict(synth), "gap_spec": asdict(gaps)},
    )
    report.clean, report.mask = clean, mask  # kept for plot-data export
    return report


def _shallow(config: BenchConfig) -> dict:
    return {f: getattr(config, f) for f in config.__dataclass_fields__}


def aggregate_reports(reports: Sequence[BenchmarkReport]) -> BenchmarkReport:
    """Mean of every metric per method across reports; the JSON metadata
    carries the per-seed rows and standard deviations."""
    methods: list[str] = []
    for rep in reports:
        for r in rep.rows:
            if r.method not in methods:
                methods.append(r.method)
    rows, spread = [], {}
    for method in methods:
        found = [rep.row(method) for rep in reports if any(r.method == method for r in rep.rows)]
        good = [r for r in found if r.ok]
        failed = len(reports) - len(good)
        status = "ok" if not failed else f"failed {failed}/{len(reports)}"
        if not good:
            rows.append(MethodRow(method, status=status))
            continue

        def stat(get):
            vals = [get(r) for r in good if get(r) is not None]
            if not vals:
                return None, None
            return float(np.mean(vals)), float(np.std(vals))

        mae_m, mae_s = stat(lambda r: r.metrics.mae)
        mape_m, mape_s = stat(lambda r: r.metrics.mape)
        fm_m, fm_s = stat(lambda r: r.forecast_mape)
        dev_m, dev_s = stat(lambda r: r.deviation)
        excluded = sum(r.metrics.mape_excluded for r in good)
        rows.append(MethodRow(method, status=status, metrics=MetricPair(mae_m, mape_m, excluded),
                              forecast_mape=fm_m, deviation=dev_m))
        spread[method] = {"mae": mae_s, "mape": mape_s, "forecast_mape": fm_s, "deviation": dev_s}
    rows.sort(key=MethodRow.sort_key)
    meta = {
        "aggregate": "mean",
        "std": spread,
        "seeds": [rep.metadata.get("seed") for rep in reports],
        "per_seed": [rep.to_dict() for rep in reports],
    }
    return BenchmarkReport(rows, meta)


def plot_data_csv(reports: Sequence[BenchmarkReport]) -> str:
    """Per-sample fill traces over every removed index, for external plots."""
    lines = ["seed,method,gap_start,gap_length,index,actual,filled,path"]
    for rep in reports:
        seed = rep.metadata.get("seed", "")
        clean, mask = rep.clean, rep.mask
        for r in rep.rows:
            if not r.ok or r.restored is None:
                continue
            paths = {}
            for f in r.fills or []:
                for i in range(f.gap.start, f.gap.stop):
                    paths[i] = f.path
            gapped = np.where(mask, np.nan, clean.values)
            for gap in scan_gaps(TimeSeries(gapped)):
                for i in range(gap.start, gap.stop):
                    lines.append(",".join([
                        str(seed), r.method, str(gap.start), str(gap.length), str(i),
                        format_value(clean.values[i]), format_value(r.restored.values[i]),
                        paths.get(i, r.method),
                    ]))
    return "\n".join(lines) + "\n"
