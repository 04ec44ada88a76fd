import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapfill.baselines import (
    BASELINE_FILLERS,
    FillerConfig,
    fill_kalman,
    fill_linear,
    fill_moving_average,
    fill_poly_batch,
    fill_poly_local,
    fill_spline,
    kalman_smooth,
)
from gapfill.errors import InsufficientDataError
from gapfill.series import TimeSeries

nan = np.nan


def vals(s):
    return s.values.tolist()


def test_linear_examples():
    assert vals(fill_linear([1, nan, 3])) == [1, 2, 3]
    assert np.allclose(vals(fill_linear([0, nan, nan, 3])), [0, 1, 2, 3])
    assert vals(fill_linear([nan, 5, nan])) == [5, 5, 5]


def test_poly_local_examples():
    t = np.arange(20.0)
    line = 2 * t
    gapped = line.copy()
    gapped[7] = nan
    out = fill_poly_local(gapped, FillerConfig(poly_degree=1, sg_window=5))
    assert abs(out.values[7] - 14.0) < 1e-8

    sq = t[:8] ** 2
    sq[3] = nan
    out = fill_poly_local(sq, FillerConfig(poly_degree=2, sg_window=5))
    assert abs(out.values[3] - 9.0) < 1e-8

    assert np.allclose(fill_poly_local([4, 4, nan, nan, 4, 4]).values, 4.0)


def test_poly_batch_examples():
    t = np.arange(10.0)
    gapped = 3 * t - 1
    gapped[[2, 5]] = nan
    out = fill_poly_batch(gapped, FillerConfig(poly_degree=1, sg_window=3))
    assert np.allclose(out.values, 3 * t - 1, atol=1e-8)

    # points (0,0),(1,1),(3,9): slope 22/7, intercept -6/7, value at 2 = 38/7
    out = fill_poly_batch([0, 1, nan, 9], FillerConfig(poly_degree=1, sg_window=3))
    assert abs(out.values[2] - 38 / 7) < 1e-8

    out = fill_poly_batch([1, nan, 2, 6, nan], FillerConfig(poly_degree=0, sg_window=3))
    assert np.allclose(out.values[[1, 4]], 3.0)


def test_moving_average_examples():
    assert vals(fill_moving_average([1, nan, 3], FillerConfig(ma_window=1))) == [1, 2, 3]
    assert np.allclose(fill_moving_average([2, nan, nan, 2, 2]).values, 2)
    # left-to-right pass: 3, 4.5; right-to-left pass: 3, 1.5; averaged: 2.25, 3.75
    out = fill_moving_average([0, nan, nan, 6], FillerConfig(ma_window=1))
    assert np.allclose(out.values, [0, 2.25, 3.75, 6], atol=1e-12)


def test_spline_examples():
    t = np.arange(12.0)
    gapped = 0.5 * t + 2
    gapped[[0, 4, 5, 11]] = nan
    assert np.allclose(fill_spline(gapped).values, 0.5 * t + 2, atol=1e-8)
    # knots (0,0),(2,4),(4,0): 4h*M1 = 6*(-2-2) with h=2 gives M1=-3, so S(1)=3-0.25
    out = fill_spline([0, nan, 4, nan, 0])
    assert abs(out.values[1] - 2.75) < 1e-8
    assert abs(out.values[3] - 2.75) < 1e-8
    assert np.allclose(fill_spline([7, nan, 7, 7, nan]).values, 7)


def test_kalman_examples():
    assert np.allclose(fill_kalman([5, 5, nan, 5, 5]).values, 5, atol=1e-8)
    assert np.allclose(fill_kalman([nan, 3.5, nan, nan]).values, 3.5)
    cfg = FillerConfig(kalman_obs_var=1e-12)
    assert abs(fill_kalman([0, nan, 2], cfg).values[1] - 1.0) < 1e-8


def test_kalman_three_step_hand_recursion():
    q, r, p0 = 0.01, 0.1, 1e7
    # filter: prior mean 0 (first observation), variance p0
    k0 = p0 / (p0 + r)
    m0, p0f = 0.0, (1 - k0) * p0
    m1p, p1p = m0, p0f + q  # index 1 missing: predict only
    m1, p1f = m1p, p1p
    m2p, p2p = m1, p1f + q
    k2 = p2p / (p2p + r)
    m2, p2f = m2p + k2 * (2.0 - m2p), (1 - k2) * p2p
    # RTS smoother
    c1 = p1f / p2p
    s1 = m1 + c1 * (m2 - m2p)
    c0 = p0f / p1p
    s0 = m0 + c0 * (s1 - m1p)
    means, _ = kalman_smooth(np.array([0.0, nan, 2.0]), q, r)
    assert np.allclose(means, [s0, s1, m2], atol=1e-8, rtol=0)


def test_config_validation():
    with pytest.raises(ValueError):
        FillerConfig(sg_window=4)
    with pytest.raises(ValueError):
        FillerConfig(poly_degree=3, sg_window=3)
    with pytest.raises(ValueError):
        FillerConfig(kalman_obs_var=0)


@pytest.mark.parametrize("name", [n for n in BASELINE_FILLERS if n not in ("kalman", "linear")])
def test_insufficient_data(name):
    with pytest.raises(InsufficientDataError, match="insufficient data"):
        BASELINE_FILLERS[name]([nan, 1.0, nan])


@pytest.mark.parametrize("fill", [fill_kalman, fill_linear])
def test_single_observation_fillers_need_one(fill):
    with pytest.raises(InsufficientDataError):
        fill([nan, nan])


gapped_lists = st.lists(
    st.one_of(st.none(), st.floats(-100, 100, allow_nan=False)), min_size=3, max_size=30
).filter(lambda v: sum(x is not None for x in v) >= 3)


@settings(max_examples=60, deadline=None)
@given(gapped_lists, st.sampled_from(sorted(BASELINE_FILLERS)))
def test_totality_and_passthrough(v, name):
    s = TimeSeries(v)
    out = BASELINE_FILLERS[name](s)
    assert out.n_missing == 0
    obs = ~s.missing
    assert np.array_equal(out.values[obs], s.values[obs])
    assert BASELINE_FILLERS[name](out) == out


@pytest.mark.parametrize("name", sorted(BASELINE_FILLERS))
def test_polynomial_reproduction(name):
    t = np.arange(30.0)
    if name in ("poly-local", "poly-batch"):
        truth = 0.3 * t**2 - t + 4
    elif name == "spline":
        truth = -1.5 * t + 2
    else:
        return
    g = truth.copy()
    g[[3, 4, 10, 17, 18, 19]] = nan
    assert np.allclose(BASELINE_FILLERS[name](g).values, truth, atol=1e-8, rtol=0)


@settings(max_examples=60, deadline=None)
@given(gapped_lists, st.floats(0.1, 10), st.floats(-50, 50))
def test_linear_equivariance(v, a, b):
    x = TimeSeries(v).values
    assert np.allclose(fill_linear(a * x + b).values, a * fill_linear(x).values + b, atol=1e-8)
