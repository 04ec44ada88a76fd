"""Lag embedding and the atomic regressors (ridge, lasso, k-nearest neighbours).

Linear models center the features and divide them by one pooled scale
factor before solving; coefficients are reported in original units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view

from gapfill.errors import InsufficientDataError, SingularSystemError
from gapfill.series import TimeSeries, as_series

__all__ = [
    "LagMatrix",
    "AtomicModel",
    "FittedModel",
    "MODEL_KINDS",
    "default_window",
    "build_lag_matrix",
    "fit",
    "fit_arrays",
    "predict",
    "forecast_recursive",
    "recursive_forecast",
]

MODEL_KINDS = ("ridge", "lasso", "knn")

LASSO_TOL = 1e-6
LASSO_MAX_SWEEPS = 10_000
_KNN_CHUNK = 256


def default_window(n: int) -> int:
    """Lag window used when none is given.

    200 above 2000 samples, 100 above 1000, otherwise ``n // 10`` (at least 3).
    """
    if n > 2000:
        return 200
    if n > 1000:
        return 100
    return max(3, n // 10)


@dataclass(frozen=True, eq=False)
class LagMatrix:
    """Supervised pairs: each feature row is ``w`` values, target is the next."""

    features: np.ndarray
    targets: np.ndarray
    w: int
    target_index: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return self.targets.size


def build_lag_matrix(series: TimeSeries, w: int) -> LagMatrix:
    """One row per index ``i >= w`` whose window ``[i-w, i]`` is fully observed."""
    series = as_series(series)
    if w < 1:
        raise ValueError("window length must be positive")
    vals = series.values
    if vals.size <= w:
        raise InsufficientDataError(
            f"insufficient contiguous data: series length {vals.size} <= w={w}"
        )
    windows = sliding_window_view(vals, w + 1)
    ok = ~np.isnan(windows).any(axis=1)
    if not ok.any():
        raise InsufficientDataError(
            f"insufficient contiguous data: no fully observed window of {w + 1}"
        )
    rows = windows[ok]
    return LagMatrix(
        features=np.ascontiguousarray(rows[:, :w]),
        targets=rows[:, w].copy(),
        w=w,
        target_index=np.flatnonzero(ok) + w,
    )


@dataclass(frozen=True)
class AtomicModel:
    """Unfitted model description.

    ``alpha`` is the ridge/lasso penalty weight, ``k`` the neighbour count.
    """

    kind: str = "ridge"
    alpha: float = 1.0
    k: int = 5

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.alpha < 0 or not np.isfinite(self.alpha):
            raise ValueError("alpha must be a finite non-negative number")
        if self.k < 1:
            raise ValueError("k must be at least 1")


@dataclass(frozen=True, eq=False)
class FittedModel:
    model: AtomicModel
    n_features: int
    coef: np.ndarray | None = None
    intercept: float = 0.0
    train_x: np.ndarray | None = None
    train_y: np.ndarray | None = None
    train_sq: np.ndarray | None = field(default=None, repr=False)

    def predict_many(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(
                f"expected rows of length {self.n_features}, got shape {x.shape}"
            )
        if self.model.kind == "knn":
            return _knn_predict(self.train_x, self.train_y, self.train_sq, x, self.model.k)
        return x @ self.coef + self.intercept


def _standardize(x: np.ndarray, y: np.ndarray):
    x_mean = x.mean(axis=0)
    y_mean = float(y.mean())
    xc = x - x_mean
    scale = float(np.sqrt(np.mean(xc * xc)))
    if not np.isfinite(scale) or scale == 0.0:
        scale = 1.0
    return xc / scale, y - y_mean, x_mean, y_mean, scale


def _ridge(z: np.ndarray, yc: np.ndarray, alpha: float) -> np.ndarray:
    gram = z.T @ z
    rhs = z.T @ yc
    if alpha == 0.0:
        if np.linalg.matrix_rank(z) < z.shape[1]:
            raise SingularSystemError("singular system: rank-deficient features with alpha=0")
    else:
        gram[np.diag_indices_from(gram)] += alpha
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        raise SingularSystemError("singular system") from None


@njit(cache=True, nogil=True)
def _lasso_cd(gram, corr, alpha, tol, max_sweeps):  # pragma: no cover - compiled
    p = gram.shape[0]
    beta = np.zeros(p)
    g_beta = np.zeros(p)
    half = 0.5 * alpha
    for _ in range(max_sweeps):
        max_step = 0.0
        for j in range(p):
            d = gram[j, j]
            if d == 0.0:
                continue
            old = beta[j]
            rho = corr[j] - g_beta[j] + d * old
            if rho > half:
                new = (rho - half) / d
            elif rho < -half:
                new = (rho + half) / d
            else:
                new = 0.0
            step = new - old
            if step != 0.0:
                beta[j] = new
                for i in range(p):
                    g_beta[i] += gram[i, j] * step
                if abs(step) > max_step:
                    max_step = abs(step)
        if max_step < tol:
            break
    return beta


def _lasso(z: np.ndarray, yc: np.ndarray, alpha: float) -> np.ndarray:
    """Cyclic coordinate descent on ||yc - z b||^2 + alpha * ||b||_1."""
    gram = np.ascontiguousarray(z.T @ z)
    corr = z.T @ yc
    return _lasso_cd(gram, corr, float(alpha), LASSO_TOL, LASSO_MAX_SWEEPS)


def fit_arrays(model: AtomicModel, x: np.ndarray, y: np.ndarray) -> FittedModel:
    """Fit ``model`` on a feature matrix and target vector."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("features must be 2-D with one row per target")
    if y.size < 1:
        raise InsufficientDataError("insufficient data: no training rows")
    if model.kind == "knn":
        train_x = np.ascontiguousarray(x, dtype=float).copy()
        return FittedModel(
            model, x.shape[1], train_x=train_x, train_y=y.copy(),
            train_sq=np.einsum("ij,ij->i", train_x, train_x),
        )
    z, yc, x_mean, y_mean, scale = _standardize(x, y)
    if model.kind == "ridge":
        beta = _ridge(z, yc, model.alpha)
    else:
        beta = _lasso(z, yc, model.alpha)
    coef = beta / scale
    if not np.all(np.isfinite(coef)):
        raise SingularSystemError("singular system: non-finite coefficients")
    intercept = y_mean - float(x_mean @ coef)
    return FittedModel(model, x.shape[1], coef=coef, intercept=intercept)


def fit(model: AtomicModel, data: LagMatrix) -> FittedModel:
    return fit_arrays(model, data.features, data.targets)


def _knn_predict(train_x, train_y, train_sq, x, k) -> np.ndarray:
    k = min(k, train_y.size)
    out = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], _KNN_CHUNK):
        block = x[lo:lo + _KNN_CHUNK]
        d2 = (
            np.einsum("ij,ij->i", block, block)[:, None]
            + train_sq[None, :]
            - 2.0 * block @ train_x.T
        )
        np.maximum(d2, 0.0, out=d2)
        out[lo:lo + block.shape[0]] = _mean_of_nearest(d2, train_y, k)
    return out


@njit(cache=True, nogil=True)
def _mean_of_nearest(d2, train_y, k):  # pragma: no cover - compiled
    # insertion into a sorted top-k list; strict comparison keeps the lower
    # row index first among equal distances
    m, n = d2.shape
    out = np.empty(m)
    best_d = np.empty(k)
    best_i = np.empty(k, dtype=np.int64)
    for r in range(m):
        count = 0
        for j in range(n):
            d = d2[r, j]
            if count == k and d >= best_d[k - 1]:
                continue
            pos = count if count < k else k - 1
            while pos > 0 and best_d[pos - 1] > d:
                if pos < k:
                    best_d[pos] = best_d[pos - 1]
                    best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_d[pos] = d
            best_i[pos] = j
            if count < k:
                count += 1
        total = 0.0
        for q in range(k):
            total += train_y[best_i[q]]
        out[r] = total / k
    return out


def predict(fitted: FittedModel, window) -> float:
    """One-step prediction from a single window of ``n_features`` values."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 1 or window.size != fitted.n_features:
        raise ValueError(
            f"window length {window.size} does not match w={fitted.n_features}"
        )
    if np.isnan(window).any():
        raise ValueError("window contains missing values")
    return float(fitted.predict_many(window[None, :])[0])


def recursive_forecast(
    predict_many: Callable[[np.ndarray], np.ndarray],
    seeds: np.ndarray,
    horizon: int | Sequence[int],
) -> np.ndarray:
    """Iterated one-step forecasts for a batch of seed windows.

    ``horizon`` may be one length for all seeds or one per seed; rows stop
    being predicted once their own horizon is reached. Returns an array of
    shape ``(len(seeds), max(horizon))``, NaN-padded past each row's horizon.
    """
    seeds = np.asarray(seeds, dtype=float)
    m, w = seeds.shape
    horizons = np.broadcast_to(np.asarray(horizon, dtype=int), (m,))
    if m and horizons.min() < 1:
        raise ValueError("horizon must be at least 1")
    longest = int(horizons.max()) if m else 0
    order = np.argsort(-horizons, kind="stable")
    steps = horizons[order]
    buf = np.full((m, w + longest), np.nan)
    buf[:, :w] = seeds[order]
    active = m
    for h in range(longest):
        while active and steps[active - 1] <= h:
            active -= 1
        buf[:active, w + h] = predict_many(buf[:active, h:h + w])
    out = np.empty((m, longest))
    out[order] = buf[:, w:]
    return out


def forecast_recursive(fitted: FittedModel, seed_window, horizon: int) -> np.ndarray:
    seed = np.asarray(seed_window, dtype=float)
    if seed.ndim != 1 or seed.size != fitted.n_features:
        raise ValueError(
            f"seed window length {seed.size} does not match w={fitted.n_features}"
        )
    return recursive_forecast(fitted.predict_many, seed[None, :], horizon)[0]
