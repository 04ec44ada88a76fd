"""Bi-directional gap filling.

One pipeline genome is fit twice, on the series and on its time reversal.
Each gap gets a forward forecast seeded by the observations before it and
a backward forecast seeded by the (reversed) observations after it; the
two are merged position by position with a convex weight.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

from gapfill.errors import GapFillError, InsufficientDataError
from gapfill.lag_models import default_window
from gapfill.pipeline import FittedPipeline, Pipeline, fit_pipeline, single_node
from gapfill.series import GapSegment, TimeSeries, as_series, extract_context, scan_gaps

if TYPE_CHECKING:
    from gapfill.evo import EvoConfig

__all__ = [
    "GapFillPolicy",
    "EnsembleCombiner",
    "DirectionalModels",
    "GapFill",
    "fit_directional",
    "fill_forward_only",
    "fill_backward_only",
    "combine",
    "fit_learned_combiner",
    "pseudo_gap_mask",
    "restore_gaps",
    "fill_bidirectional",
]

logger = logging.getLogger(__name__)

PSEUDO_GAP_LENGTHS = (5, 50)


@dataclass(frozen=True)
class GapFillPolicy:
    """Window lengths and the minimum observed run needed to forecast."""

    w: int
    w1: int
    w2: int
    min_window: int

    def __post_init__(self):
        if min(self.w, self.w1, self.w2) < 1:
            raise ValueError("window lengths must be positive")
        if self.min_window < 3:
            raise ValueError("min_window must be at least 3")

    @classmethod
    def default(cls, w: int, w1: int | None = None, w2: int | None = None,
                min_window: int | None = None) -> GapFillPolicy:
        return cls(
            w=w,
            w1=w if w1 is None else w1,
            w2=w if w2 is None else w2,
            min_window=max(3, w // 2) if min_window is None else min_window,
        )


@dataclass(frozen=True)
class EnsembleCombiner:
    """Per-position convex weight of the forward forecast.

    ``ramp`` weights position ``j`` of ``n`` by ``1 - j/(n-1)``. ``learned``
    uses ``clip(c0 + c1 * j/(n-1), 0, 1)`` with coefficients fitted on
    pseudo-gaps; the ramp is the special case ``c0=1, c1=-1``, which is
    also what a learned combiner uses until ``coef`` is set.
    """

    mode: str = "ramp"
    coef: tuple[float, float] | None = None

    def __post_init__(self):
        if self.mode not in ("ramp", "learned"):
            raise ValueError(f"unknown combiner mode {self.mode!r}")

    def weights(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("gap length must be positive")
        r = np.full(1, 0.5) if n == 1 else np.arange(n) / (n - 1)
        if self.mode == "ramp" or self.coef is None:
            return 1.0 - r
        return np.clip(self.coef[0] + self.coef[1] * r, 0.0, 1.0)


def combine(forward_pred, backward_pred, combiner: EnsembleCombiner | None = None) -> np.ndarray:
    fwd = np.asarray(forward_pred, dtype=float)
    bwd = np.asarray(backward_pred, dtype=float)
    if fwd.shape != bwd.shape or fwd.ndim != 1:
        raise ValueError(f"length mismatch: {fwd.shape} vs {bwd.shape}")
    alpha = (combiner or EnsembleCombiner()).weights(fwd.size)
    out = bwd + alpha * (fwd - bwd)
    out = np.where(alpha == 1.0, fwd, np.where(alpha == 0.0, bwd, out))
    # rounding in the blend must not leave the segment between the inputs
    return np.clip(out, np.minimum(fwd, bwd), np.maximum(fwd, bwd))


@dataclass(frozen=True, eq=False)
class DirectionalModels:
    forward: FittedPipeline
    backward: FittedPipeline | None


def fit_directional(genome: Pipeline, series: TimeSeries, w: int,
                    backward: bool = True, caches=None) -> DirectionalModels:
    """Fit one genome forwards and on the reversed series.

    ``caches`` is an optional ``(forward, backward)`` pair of
    :class:`FitCache` objects bound to this series and ``w``.
    """
    series = as_series(series)
    fcache, bcache = caches or (None, None)
    fwd = fit_pipeline(genome, series, w, fcache)
    bwd = fit_pipeline(genome, series.reversed(), w, bcache) if backward else None
    return DirectionalModels(fwd, bwd)


def _seed(run: np.ndarray, w: int) -> np.ndarray:
    """Last ``w`` values of ``run``; shorter runs are left-padded along
    their least-squares line."""
    if run.size >= w:
        return run[-w:].copy()
    pos = np.arange(run.size, dtype=float)
    slope, icpt = np.polyfit(pos, run, 1)
    lead = np.arange(run.size - w, 0, dtype=float)
    return np.concatenate([icpt + slope * lead, run])


def _forward_seed(series: TimeSeries, gap: GapSegment, policy: GapFillPolicy) -> np.ndarray:
    ctx = extract_context(series, gap, policy.w1, policy.w2)
    if ctx.pre_window.size < policy.min_window:
        raise InsufficientDataError(
            f"insufficient pre-history for gap at {gap.start}: "
            f"{ctx.pre_window.size} < {policy.min_window}"
        )
    return _seed(ctx.pre_window, policy.w)


def _backward_seed(series: TimeSeries, gap: GapSegment, policy: GapFillPolicy) -> np.ndarray:
    ctx = extract_context(series, gap, policy.w1, policy.w2)
    if ctx.post_window.size < policy.min_window:
        raise InsufficientDataError(
            f"insufficient post-history for gap at {gap.start}: "
            f"{ctx.post_window.size} < {policy.min_window}"
        )
    return _seed(ctx.post_window[::-1], policy.w)


def _check_model(model: FittedPipeline, policy: GapFillPolicy) -> None:
    if model.w != policy.w:
        raise GapFillError(f"model window {model.w} differs from policy window {policy.w}")


def fill_forward_only(series, gap: GapSegment, model: FittedPipeline,
                      policy: GapFillPolicy) -> np.ndarray:
    """Forecast the gap from the observations before it."""
    series = as_series(series)
    _check_model(model, policy)
    return model.forecast(_forward_seed(series, gap, policy), gap.length)


def fill_backward_only(series, gap: GapSegment, model: FittedPipeline,
                       policy: GapFillPolicy) -> np.ndarray:
    """Forecast the gap from the reversed observations after it.

    ``model`` must have been fit on the reversed series; the result is
    returned in natural time order.
    """
    series = as_series(series)
    _check_model(model, policy)
    return model.forecast(_backward_seed(series, gap, policy), gap.length)[::-1].copy()


@dataclass(frozen=True, eq=False)
class GapFill:
    """How one gap was filled."""

    gap: GapSegment
    path: str  # "bidirectional", "forward", "backward" or "linear"
    values: np.ndarray
    forward: np.ndarray | None = None
    backward: np.ndarray | None = None


def _batch_forecast(model: FittedPipeline, seeds: list[np.ndarray],
                    horizons: list[int]) -> list[np.ndarray]:
    if not seeds:
        return []
    out = model.forecast_many(np.vstack(seeds), horizons)
    return [row[:h].copy() for row, h in zip(out, horizons)]


def _linear_bridge(series: TimeSeries, gap: GapSegment) -> np.ndarray:
    obs = np.flatnonzero(~series.missing)
    return np.interp(gap.indices(), obs, series.values[obs])


def restore_gaps(series: TimeSeries, gaps: list[GapSegment], models: DirectionalModels,
                 policy: GapFillPolicy, combiner: EnsembleCombiner | None = None,
                 direction: str = "both") -> list[GapFill]:
    """Fill ``gaps`` using only originally observed samples as context.

    ``direction="forward"`` uses the backward model only for gaps without
    enough pre-history. Gaps lacking both windows are bridged linearly.
    """
    if direction not in ("both", "forward"):
        raise ValueError(f"unknown direction {direction!r}")
    combiner = combiner or EnsembleCombiner()
    fwd_seeds: dict[int, np.ndarray] = {}
    bwd_seeds: dict[int, np.ndarray] = {}
    for k, gap in enumerate(gaps):
        try:
            fwd_seeds[k] = _forward_seed(series, gap, policy)
        except InsufficientDataError:
            pass
        if direction == "both" or k not in fwd_seeds:
            try:
                bwd_seeds[k] = _backward_seed(series, gap, policy)
            except InsufficientDataError:
                pass
    if bwd_seeds and models.backward is None:
        raise GapFillError("backward model required but not fitted")

    fwd_keys = sorted(fwd_seeds)
    bwd_keys = sorted(bwd_seeds)
    fwd_preds = dict(zip(fwd_keys, _batch_forecast(
        models.forward, [fwd_seeds[k] for k in fwd_keys], [gaps[k].length for k in fwd_keys])))
    bwd_preds = dict(zip(bwd_keys, _batch_forecast(
        models.backward, [bwd_seeds[k] for k in bwd_keys], [gaps[k].length for k in bwd_keys])))
    bwd_preds = {k: v[::-1].copy() for k, v in bwd_preds.items()}

    fills = []
    for k, gap in enumerate(gaps):
        f = fwd_preds.get(k)
        b = bwd_preds.get(k)
        if f is not None and b is not None:
            fills.append(GapFill(gap, "bidirectional", combine(f, b, combiner), f, b))
        elif f is not None:
            fills.append(GapFill(gap, "forward", f, f, None))
        elif b is not None:
            fills.append(GapFill(gap, "backward", b, None, b))
        else:
            fills.append(GapFill(gap, "linear", _linear_bridge(series, gap)))
    return fills


def _fragment(known: np.ndarray, start: int, step: int, limit: int) -> int:
    """Length (capped at ``limit``) of the known run beginning at ``start``
    and walking in direction ``step``."""
    if step < 0:
        piece = known[max(0, start - limit + 1):start + 1][::-1]
    else:
        piece = known[start:start + limit]
    stops = np.flatnonzero(~piece)
    return int(stops[0]) if stops.size else int(piece.size)


def pseudo_gap_mask(series: TimeSeries, fraction: float, rng: np.random.Generator,
                    lengths: tuple[int, int] = PSEUDO_GAP_LENGTHS,
                    min_run: int | None = None) -> np.ndarray:
    """Mask about ``fraction`` of the observed samples as contiguous pseudo-gaps.

    Without ``min_run`` every pseudo-gap sits strictly inside observed data,
    so each one stays a separate gap with known truth at every position.
    With ``min_run`` a pseudo-gap may also extend an existing gap, but it
    never leaves an observed fragment shorter than ``min_run`` next to it;
    this keeps enough complete lag windows to train on.
    """
    series = as_series(series)
    known = ~series.missing
    n = known.size
    target = int(round(fraction * int(known.sum())))
    mask = np.zeros(n, dtype=bool)
    lo, hi = lengths
    count = 0
    attempts = 0
    max_attempts = 200 + 50 * max(target, 1)
    while count < target and attempts < max_attempts:
        attempts += 1
        length = min(int(rng.integers(lo, hi + 1)), target - count)
        if length >= n:
            continue
        if min_run is not None and rng.random() < 0.5:
            holes = np.flatnonzero(np.diff(np.concatenate(([1], known.astype(np.int8), [1]))))
            if holes.size == 0:
                continue
            edge = int(holes[int(rng.integers(holes.size))])
            start = edge if known[min(edge, n - 1)] else edge - length
        else:
            start = int(rng.integers(0, n - length + 1))
        stop = start + length
        if start < 0 or stop > n or not known[start:stop].all():
            continue
        cap = min_run or 1
        left = _fragment(known, start - 1, -1, cap) if start > 0 else 0
        right = _fragment(known, stop, 1, cap) if stop < n else 0
        if min_run is None:
            if left < 1 or right < 1:
                continue
        elif (0 < left < min_run) or (0 < right < min_run):
            continue
        known[start:stop] = False
        mask[start:stop] = True
        count += length
    return mask


def fit_learned_combiner(series: TimeSeries, models: DirectionalModels,
                         policy: GapFillPolicy, rng_seed: int = 0,
                         fraction: float = 0.1) -> EnsembleCombiner:
    """Fit the affine forward weight on pseudo-gaps of the observed data.

    Falls back to the ramp coefficients when no pseudo-gap has both
    directional forecasts.
    """
    series = as_series(series)
    mask = pseudo_gap_mask(series, fraction, np.random.default_rng(rng_seed))
    masked = series.values.copy()
    masked[mask] = np.nan
    masked_series = series.replace(masked)
    truth = series.values
    pseudo = [g for g in scan_gaps(masked_series) if mask[g.start]]
    fills = restore_gaps(masked_series, pseudo, models, policy)
    rows, targets = [], []
    for fill in fills:
        if fill.path != "bidirectional":
            continue
        n = fill.gap.length
        r = np.full(1, 0.5) if n == 1 else np.arange(n) / (n - 1)
        d = fill.forward - fill.backward
        rows.append(np.column_stack([d, r * d]))
        targets.append(truth[fill.gap.start:fill.gap.stop] - fill.backward)
    ramp = EnsembleCombiner("learned", (1.0, -1.0))
    if not rows:
        return ramp
    design = np.vstack(rows)
    target = np.concatenate(targets)
    if np.linalg.matrix_rank(design) < 2:
        return ramp
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return EnsembleCombiner("learned", (float(coef[0]), float(coef[1])))


ModelSource = Union[str, Pipeline, "EvoConfig"]


def _resolve_genome(model_source, series: TimeSeries, w: int, threads: int | None) -> Pipeline:
    if isinstance(model_source, Pipeline):
        return model_source
    if model_source == "single_ridge":
        return single_node("ridge")
    from gapfill.evo import EvoConfig, run_search

    if isinstance(model_source, EvoConfig):
        return run_search(series, w, model_source, threads=threads).best
    raise ValueError(f"unknown model source {model_source!r}")


def fill_bidirectional(
    series,
    policy: GapFillPolicy | None = None,
    combiner: EnsembleCombiner | None = None,
    model_source: ModelSource = "single_ridge",
    w: int | None = None,
    direction: str = "both",
    threads: int | None = None,
    details: list | None = None,
) -> TimeSeries:
    """Fill every gap of ``series`` with forward/backward model forecasts.

    Parameters
    ----------
    series : TimeSeries or array-like
        Series with NaN gaps.
    policy : GapFillPolicy, optional
        Defaults to ``GapFillPolicy.default(w)``.
    combiner : EnsembleCombiner, optional
        ``ramp`` by default. A ``learned`` combiner without fitted
        coefficients is trained on pseudo-gaps before filling.
    model_source : "single_ridge", Pipeline or EvoConfig
        A fixed genome, or the configuration of an evolutionary search run
        on the series itself.
    direction : {"both", "forward"}
        ``"forward"`` reproduces plain forecasting from pre-history.
    details : list, optional
        When given, receives one :class:`GapFill` per gap.
    """
    series = as_series(series)
    gaps = scan_gaps(series)
    if not gaps:
        return series
    if w is None:
        w = policy.w if policy is not None else default_window(len(series))
    policy = policy or GapFillPolicy.default(w)
    n_obs = len(series) - series.n_missing
    if n_obs < policy.min_window:
        raise InsufficientDataError(
            f"series unusable: {n_obs} observed samples < min_window={policy.min_window}"
        )
    genome = _resolve_genome(model_source, series, policy.w, threads)
    models = fit_directional(genome, series, policy.w)
    combiner = combiner or EnsembleCombiner()
    if combiner.mode == "learned" and combiner.coef is None:
        combiner = fit_learned_combiner(series, models, policy)
        logger.info("learned combiner coefficients %s", combiner.coef)
    fills = restore_gaps(series, gaps, models, policy, combiner, direction)
    out = series.values.copy()
    for fill in fills:
        out[fill.gap.start:fill.gap.stop] = fill.values
    if details is not None:
        details.extend(fills)
    return series.replace(out)
