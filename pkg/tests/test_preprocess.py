import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cdfcold.errors import DimensionMismatch, InsufficientData, TooShort, ZeroWindow
from cdfcold.preprocess import (
    DifferenceAnchor,
    PipelineConfig,
    PipelineState,
    ZScoreParams,
    apply_pipeline,
    difference,
    inverse_difference,
    invert_forecast,
    preprocess_pipeline,
    rolling_median,
    smooth_panel,
    smoothed_levels,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)

from conftest import make_panel


def test_rolling_median_constant():
    np.testing.assert_array_equal(rolling_median([5, 5, 5, 5], 7), [5, 5, 5, 5])


def test_rolling_median_spike():
    np.testing.assert_array_equal(rolling_median([1, 1, 100, 1, 1], 3), [1, 1, 1, 1, 1])


def test_rolling_median_window_one_is_identity(rng):
    x = rng.normal(size=20)
    np.testing.assert_array_equal(rolling_median(x, 1), x)


def test_rolling_median_zero_window():
    with pytest.raises(ZeroWindow):
        rolling_median([1.0, 2.0], 0)


def test_rolling_median_skips_masked():
    out = rolling_median([1.0, 50.0, 3.0], 3, observed=[True, False, True])
    assert out[2] == 2.0  # median of the observed 1 and 3
    assert np.isnan(rolling_median([1.0], 2, observed=[False])[0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e6, 1e6)),
       st.integers(1, 9), st.data())
def test_rolling_median_is_causal(x, window, data):
    t = data.draw(st.integers(0, len(x) - 2))
    y = x.copy()
    y[t + 1:] = data.draw(arrays(np.float64, len(x) - t - 1, elements=st.floats(-1e6, 1e6)))
    np.testing.assert_array_equal(rolling_median(x, window)[:t + 1], rolling_median(y, window)[:t + 1])


def test_smooth_keeps_masked_cells_masked():
    obs = np.ones((6, 1), bool)
    obs[2, 0] = False
    s = smooth_panel(make_panel(np.arange(6.0)[:, None], observed=obs), 3)
    assert not s.observed[2, 0] and s.observed.sum() == 5


def test_difference_oracle():
    d, anchor = difference(make_panel([[5.0], [7.0], [4.0]]))
    np.testing.assert_array_equal(d.values[:, 0], [2, -3])
    assert anchor.last_levels[0] == 4


def test_difference_constant_and_short():
    d, _ = difference(make_panel(np.full((4, 2), 3.0)))
    assert not d.values.any()
    with pytest.raises(TooShort):
        difference(make_panel([[1.0]]))


def test_inverse_difference():
    np.testing.assert_array_equal(inverse_difference([[2.0], [-3.0]], DifferenceAnchor(np.array([5.0]))), [[7], [4]])
    np.testing.assert_array_equal(inverse_difference(np.zeros((3, 1)), DifferenceAnchor(np.array([2.0]))),
                                  [[2], [2], [2]])
    with pytest.raises(DimensionMismatch):
        inverse_difference(np.zeros((3, 2)), DifferenceAnchor(np.array([2.0])))


def test_difference_round_trip(rng):
    x = rng.normal(size=(30, 3)).cumsum(axis=0)
    d, _ = difference(make_panel(x))
    np.testing.assert_allclose(inverse_difference(d.values, DifferenceAnchor(x[0])), x[1:], atol=1e-12)


def test_zscore_fit_oracles():
    p = zscore_fit(make_panel([[1.0], [3.0]]))
    assert p.mu[0] == 2 and p.sigma[0] == 1 and not p.degenerate[0]
    p = zscore_fit(make_panel([[4.0], [4.0], [4.0]]))
    assert p.mu[0] == 4 and p.sigma[0] == 1 and p.degenerate[0]
    with pytest.raises(InsufficientData):
        zscore_fit(make_panel([[1.0], [2.0]], observed=[[True], [False]]))


def test_zscore_apply_oracle():
    params = ZScoreParams(np.array([2.0]), np.array([1.0]), np.array([False]))
    np.testing.assert_array_equal(zscore_apply(make_panel([[1.0], [3.0]]), params).values[:, 0], [-1, 1])


def test_zscore_round_trip_and_moments(rng):
    p = make_panel(rng.normal(5, 3, size=(10, 3)))
    params = zscore_fit(p)
    z = zscore_apply(p, params).values
    assert np.abs(z.mean(axis=0)).max() < 1e-10
    assert np.abs(z.std(axis=0) - 1).max() < 1e-10
    np.testing.assert_allclose(zscore_invert(z, params), p.values, atol=1e-12)
    with pytest.raises(DimensionMismatch):
        zscore_invert(z[:, :2], params)


def test_zscore_degenerate_subtracts_mean():
    p = make_panel([[4.0, 1.0], [4.0, 2.0]])
    z = zscore_apply(p, zscore_fit(p)).values
    np.testing.assert_array_equal(z[:, 0], [0, 0])


def test_pipeline_all_off_is_identity(rng):
    p = make_panel(rng.normal(size=(20, 2)))
    out, state = preprocess_pipeline(p, PipelineConfig(False, 7, False, False))
    assert out.equals(p)
    np.testing.assert_array_equal(invert_forecast(p.values, state), p.values)


def test_pipeline_inverts_true_future_diffs(rng):
    x = 50 + rng.normal(size=(60, 3)).cumsum(axis=0)
    p = make_panel(x)
    cfg = PipelineConfig(smooth=False)
    _, state = preprocess_pipeline(make_panel(x[:40]), cfg)
    z = apply_pipeline(p, state).values  # row r = x[r+1] - x[r], standardized
    future = z[39:49]  # diffs into rows 40..49
    np.testing.assert_allclose(invert_forecast(future, state, anchor_levels=x[39]), x[40:50], atol=1e-9)
    # default anchor is the last training level
    np.testing.assert_allclose(invert_forecast(future, state), x[40:50], atol=1e-9)


def test_pipeline_output_centered(rng):
    p = make_panel(100 + rng.normal(size=(200, 3)).cumsum(axis=0))
    out, _ = preprocess_pipeline(p)
    assert np.abs(out.values.mean(axis=0)).max() < 1e-10


def test_pipeline_smoothed_inversion(rng):
    p = make_panel(100 + rng.normal(size=(80, 2)).cumsum(axis=0))
    out, state = preprocess_pipeline(p)
    levels = smoothed_levels(p, state).values
    np.testing.assert_allclose(invert_forecast(out.values, state, anchor_levels=levels[0]), levels[1:], atol=1e-9)


def test_state_json_round_trip(tmp_path, rng):
    _, state = preprocess_pipeline(make_panel(rng.normal(size=(30, 2))))
    state.save(tmp_path / "s.json")
    back = PipelineState.load(tmp_path / "s.json")
    assert back.config == state.config
    np.testing.assert_array_equal(back.zscore.sigma, state.zscore.sigma)
    np.testing.assert_array_equal(back.anchor.last_levels, state.anchor.last_levels)
