"""Synthetic sinusoid series with a regime change, and gap injection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gapfill.errors import GapFillError
from gapfill.lag_models import default_window
from gapfill.series import TimeSeries, as_series

__all__ = ["SyntheticSpec", "GapSpec", "generate", "inject_gaps", "LONG_GAP_RATIO"]

# default long gap is n / 4.18 samples (about 24% of the series)
LONG_GAP_RATIO = 4.18


@dataclass(frozen=True)
class SyntheticSpec:
    """``V[i] = sin(t) + noise + cos(t*T)`` with ``t = i * t_step``.

    ``T`` is ``t1`` up to and including ``break_point`` and ``t2`` after it.
    ``break_point`` defaults to the middle of the series.
    """

    n: int = 5000
    t1: float = 1.0
    t2: float = 2.5
    break_point: int | None = None
    noise_mean: float = 0.0
    noise_var: float = 0.01
    rng_seed: int = 0
    t_step: float = 0.01

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 0 < self.resolved_break < self.n:
            raise ValueError("break_point must lie strictly inside the series")
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")
        if self.t_step <= 0:
            raise ValueError("t_step must be positive")

    @property
    def resolved_break(self) -> int:
        return self.n // 2 if self.break_point is None else self.break_point


def generate(spec: SyntheticSpec) -> TimeSeries:
    i = np.arange(spec.n)
    t = i * spec.t_step
    if spec.noise_var == 0:
        noise = np.full(spec.n, float(spec.noise_mean))
    else:
        rng = np.random.default_rng(spec.rng_seed)
        noise = rng.normal(spec.noise_mean, np.sqrt(spec.noise_var), spec.n)
    period = np.where(i <= spec.resolved_break, spec.t1, spec.t2)
    return TimeSeries(np.sin(t) + noise + np.cos(t * period))


@dataclass(frozen=True)
class GapSpec:
    """Where and how much to remove.

    ``None`` fields resolve against the series length: the long gap is
    ``round(n / 4.18)`` samples centred at ``n // 2`` and the protected
    margin is the default lag window.
    """

    total_fraction: float = 0.30
    segment_min: int = 5
    segment_max: int = 60
    long_gap_length: int | None = None
    long_gap_center: int | None = None
    protected_margin: int | None = None
    rng_seed: int = 0
    max_attempts: int = 100_000

    def __post_init__(self):
        if not 0.0 < self.total_fraction < 0.9:
            raise ValueError("total_fraction must lie in (0, 0.9)")
        if not 1 <= self.segment_min <= self.segment_max:
            raise ValueError("segment length range must satisfy 1 <= min <= max")
        if self.long_gap_length is not None and self.long_gap_length < 0:
            raise ValueError("long_gap_length must be non-negative")

    def resolve(self, n: int) -> tuple[int, int, int]:
        """(long gap length, long gap start, margin) for a series of length n."""
        length = round(n / LONG_GAP_RATIO) if self.long_gap_length is None else self.long_gap_length
        center = n // 2 if self.long_gap_center is None else self.long_gap_center
        margin = default_window(n) if self.protected_margin is None else self.protected_margin
        return length, center - length // 2, margin


def inject_gaps(series, spec: GapSpec | None = None) -> tuple[TimeSeries, np.ndarray]:
    """Remove one long central gap plus random short segments.

    Short segments are drawn until the removed count is within 2% of
    ``total_fraction * n``. Segments never touch each other, the long gap
    or the protected margins.

    Returns
    -------
    gapped : TimeSeries
    mask : ndarray of bool
        True at every removed index.
    """
    spec = spec or GapSpec()
    series = as_series(series)
    n = len(series)
    long_len, long_start, margin = spec.resolve(n)
    lo_bound, hi_bound = margin, n - margin
    mask = np.zeros(n, dtype=bool)
    if long_len > 0:
        if long_start < lo_bound or long_start + long_len > hi_bound:
            raise GapFillError("infeasible gap spec: long gap does not fit inside the margins")
        mask[long_start:long_start + long_len] = True

    target = spec.total_fraction * n
    lower, upper = 0.98 * target, 1.02 * target
    rng = np.random.default_rng(spec.rng_seed)
    count = int(mask.sum())
    attempts = 0
    while count < lower:
        attempts += 1
        if attempts > spec.max_attempts:
            raise GapFillError("infeasible gap spec: target fraction not reachable")
        length = int(rng.integers(spec.segment_min, spec.segment_max + 1))
        length = min(length, int(np.floor(upper)) - count)
        if length < 1 or hi_bound - length < lo_bound:
            continue
        start = int(rng.integers(lo_bound, hi_bound - length + 1))
        touch = mask[max(start - 1, 0):min(start + length + 1, n)]
        if touch.any():
            continue
        mask[start:start + length] = True
        count += length

    vals = series.values.copy()
    vals[mask] = np.nan
    return series.replace(vals), mask
