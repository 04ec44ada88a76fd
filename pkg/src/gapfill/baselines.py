"""Non-learning gap fillers used as comparison baselines.

Every filler returns a complete series, leaves observed samples untouched
and is the identity on a series without gaps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicSpline

from gapfill.errors import InsufficientDataError
from gapfill.series import TimeSeries, as_series

__all__ = [
    "FillerConfig",
    "KALMAN_INITIAL_VARIANCE",
    "fill_linear",
    "fill_poly_local",
    "fill_poly_batch",
    "fill_moving_average",
    "fill_spline",
    "fill_kalman",
    "kalman_smooth",
    "BASELINE_FILLERS",
]

# Prior variance of the first state; large enough to act as a diffuse prior.
KALMAN_INITIAL_VARIANCE = 1e7


@dataclass(frozen=True)
class FillerConfig:
    poly_degree: int = 2
    sg_window: int = 9
    ma_window: int = 5
    kalman_process_var: float = 1e-2
    kalman_obs_var: float = 1e-1

    def __post_init__(self):
        if self.poly_degree < 0:
            raise ValueError("poly_degree must be non-negative")
        if self.sg_window < 1 or self.sg_window % 2 == 0:
            raise ValueError("sg_window must be a positive odd integer")
        if self.sg_window <= self.poly_degree:
            raise ValueError("sg_window must exceed poly_degree")
        if self.ma_window < 1:
            raise ValueError("ma_window must be positive")
        if self.kalman_process_var <= 0 or self.kalman_obs_var <= 0:
            raise ValueError("Kalman variances must be positive")


def _prepare(series, min_observed: int = 2):
    series = as_series(series)
    miss = series.missing
    n_obs = int((~miss).sum())
    if n_obs < min_observed:
        raise InsufficientDataError(
            f"insufficient data: {n_obs} observed samples, need {min_observed}"
        )
    return series, miss


def fill_linear(series, config: FillerConfig | None = None) -> TimeSeries:
    """Straight lines across gaps, constant extension past the ends.

    A single observed sample is enough (the fill is then constant).
    """
    series, miss = _prepare(series, min_observed=1)
    if not miss.any():
        return series
    idx = np.arange(len(series))
    out = series.values.copy()
    out[miss] = np.interp(idx[miss], idx[~miss], series.values[~miss])
    return series.replace(out)


def _nearest_observed(obs_idx: np.ndarray, target: int, count: int) -> np.ndarray:
    """``count`` observed indices closest to ``target``; ties favour earlier."""
    pos = int(np.searchsorted(obs_idx, target))
    lo = max(0, pos - count)
    hi = min(obs_idx.size, pos + count)
    cand = obs_idx[lo:hi]
    order = np.lexsort((cand, np.abs(cand - target)))
    return np.sort(cand[order[:count]])


def fill_poly_local(series, config: FillerConfig | None = None) -> TimeSeries:
    """One least-squares polynomial per missing sample.

    Each polynomial is fit to the ``sg_window`` observed samples nearest to
    the missing index and evaluated there. The degree drops when fewer
    points than ``poly_degree + 1`` are available.
    """
    config = config or FillerConfig()
    series, miss = _prepare(series)
    if not miss.any():
        return series
    vals = series.values
    obs_idx = np.flatnonzero(~miss)
    out = vals.copy()
    for i in np.flatnonzero(miss):
        near = _nearest_observed(obs_idx, int(i), config.sg_window)
        deg = min(config.poly_degree, near.size - 1)
        poly = Polynomial.fit(near.astype(float), vals[near], deg)
        out[i] = poly(float(i))
    return series.replace(out)


def fill_poly_batch(series, config: FillerConfig | None = None) -> TimeSeries:
    """A single global least-squares polynomial over all observed samples.

    Indices are mapped onto [-1, 1] before solving; a raw Vandermonde matrix
    over thousands of indices is hopelessly ill-conditioned.
    """
    config = config or FillerConfig()
    series, miss = _prepare(series)
    if not miss.any():
        return series
    obs_idx = np.flatnonzero(~miss).astype(float)
    deg = min(config.poly_degree, obs_idx.size - 1)
    n = len(series)
    domain = [0.0, float(max(n - 1, 1))]
    poly = Polynomial.fit(obs_idx, series.values[~miss], deg, domain=domain)
    out = series.values.copy()
    out[miss] = poly(np.flatnonzero(miss).astype(float))
    return series.replace(out)


def _ma_pass(vals: np.ndarray, miss: np.ndarray, k: int, order: np.ndarray) -> np.ndarray:
    """One sweep over missing indices in ``order``.

    Values are averaged from up to ``k`` known samples on each side, where
    known means observed or already filled during this sweep.
    """
    known = ~miss
    out = vals.copy()
    n = vals.size
    for i in order:
        picked = []
        for step in (-1, 1):
            j = i + step
            taken = 0
            while 0 <= j < n and taken < k:
                if known[j]:
                    picked.append(out[j])
                    taken += 1
                j += step
        out[i] = float(np.mean(picked))
        known[i] = True
    return out


def fill_moving_average(series, config: FillerConfig | None = None) -> TimeSeries:
    """Two-sweep moving average (left-to-right and right-to-left, averaged)."""
    config = config or FillerConfig()
    series, miss = _prepare(series)
    if not miss.any():
        return series
    holes = np.flatnonzero(miss)
    forward = _ma_pass(series.values, miss, config.ma_window, holes)
    backward = _ma_pass(series.values, miss, config.ma_window, holes[::-1])
    out = series.values.copy()
    out[miss] = 0.5 * (forward[miss] + backward[miss])
    return series.replace(out)


def fill_spline(series, config: FillerConfig | None = None) -> TimeSeries:
    """Natural cubic spline through the observed samples.

    Outside the first/last observed sample the spline is continued as a
    straight line with the boundary slope.
    """
    series, miss = _prepare(series, min_observed=3)
    if not miss.any():
        return series
    x = np.flatnonzero(~miss).astype(float)
    y = series.values[~miss]
    spline = CubicSpline(x, y, bc_type="natural", extrapolate=False)
    slope = spline.derivative()
    holes = np.flatnonzero(miss).astype(float)
    filled = np.empty(holes.size)
    left = holes < x[0]
    right = holes > x[-1]
    inner = ~(left | right)
    filled[inner] = spline(holes[inner])
    filled[left] = y[0] + slope(x[0]) * (holes[left] - x[0])
    filled[right] = y[-1] + slope(x[-1]) * (holes[right] - x[-1])
    out = series.values.copy()
    out[miss] = filled
    return series.replace(out)


def kalman_smooth(
    values: np.ndarray, process_var: float, obs_var: float
) -> tuple[np.ndarray, np.ndarray]:
    """Local-level Kalman filter plus RTS smoother.

    State ``x[t] = x[t-1] + eta`` with ``Var(eta) = process_var``; observation
    ``y[t] = x[t] + eps`` with ``Var(eps) = obs_var``. NaN observations only
    propagate the prediction. The prior mean is the first observed value.

    Returns
    -------
    means, variances : ndarray
        Smoothed state means and variances, one per sample.
    """
    y = np.asarray(values, dtype=float)
    n = y.size
    observed = ~np.isnan(y)
    m_pred = np.empty(n)
    p_pred = np.empty(n)
    m_filt = np.empty(n)
    p_filt = np.empty(n)

    m = float(y[observed][0])
    p = KALMAN_INITIAL_VARIANCE
    for t in range(n):
        if t > 0:
            p = p + process_var
        m_pred[t], p_pred[t] = m, p
        if observed[t]:
            gain = p / (p + obs_var)
            m = m + gain * (y[t] - m)
            p = (1.0 - gain) * p
        m_filt[t], p_filt[t] = m, p

    m_s = m_filt.copy()
    p_s = p_filt.copy()
    for t in range(n - 2, -1, -1):
        c = p_filt[t] / p_pred[t + 1]
        m_s[t] = m_filt[t] + c * (m_s[t + 1] - m_pred[t + 1])
        p_s[t] = p_filt[t] + c * c * (p_s[t + 1] - p_pred[t + 1])
    return m_s, p_s


def fill_kalman(series, config: FillerConfig | None = None) -> TimeSeries:
    """Missing samples take the smoothed local-level state mean.

    A single observation is enough; the state then stays at that value.
    """
    config = config or FillerConfig()
    series, miss = _prepare(series, min_observed=1)
    if not miss.any():
        return series
    means, _ = kalman_smooth(
        series.values, config.kalman_process_var, config.kalman_obs_var
    )
    out = series.values.copy()
    out[miss] = means[miss]
    return series.replace(out)


BASELINE_FILLERS: dict[str, Callable[..., TimeSeries]] = {
    "linear": fill_linear,
    "poly-local": fill_poly_local,
    "poly-batch": fill_poly_batch,
    "moving-average": fill_moving_average,
    "spline": fill_spline,
    "kalman": fill_kalman,
}
