import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from disep.cam import predict_change
from disep.grid import BinaryMask, ScoreMap
from disep.localize import ThresholdConfig, changed_localization, masks_from_ground_truth, unchanged_localization

scores = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                elements=st.sampled_from([0.0, 0.35, 0.4, 0.45, 0.5, 0.6, 0.65, 1.0]) | st.floats(0, 1))


def test_defaults_match_published_settings():
    cfg = ThresholdConfig()
    assert (cfg.t_high, cfg.t_low, cfg.cam_score) == (0.60, 0.40, 0.45)


def test_config_validation():
    with pytest.raises(ValueError):
        ThresholdConfig(t_high=0.3, t_low=0.4)
    with pytest.raises(ValueError):
        ThresholdConfig(t_high=1.2)


def test_changed_localization_examples():
    cfg = ThresholdConfig()
    c = ScoreMap(np.array([[0.7, 0.5, 0.3]]))
    assert changed_localization(c, cfg).values.astype(int).tolist() == [[1, 0, 0]]
    assert changed_localization(ScoreMap(np.ones((2, 2))), cfg).values.all()
    assert changed_localization(ScoreMap(np.array([[0.6]])), cfg).values.tolist() == [[True]]


def test_unchanged_localization_examples():
    cfg = ThresholdConfig()
    c = ScoreMap(np.array([[0.7, 0.5, 0.3]]))
    assert unchanged_localization(c, cfg).values.astype(int).tolist() == [[0, 0, 1]]
    assert unchanged_localization(ScoreMap(np.array([[0.4]])), cfg).values.tolist() == [[True]]
    assert not unchanged_localization(ScoreMap(np.ones((2, 2))), cfg).values.any()


@pytest.mark.parametrize("y, changed, unchanged", [
    ([[1, 0, 1]], [[1, 0, 1]], [[0, 1, 0]]),
    ([[0, 0]], [[0, 0]], [[1, 1]]),
    ([[1, 1]], [[1, 1]], [[0, 0]]),
])
def test_masks_from_ground_truth(y, changed, unchanged):
    c, u = masks_from_ground_truth(BinaryMask(np.array(y)))
    assert c.values.astype(int).tolist() == changed
    assert u.values.astype(int).tolist() == unchanged


@given(scores, st.sampled_from([0.35, 0.4, 0.45, 0.5]), st.sampled_from([0.45, 0.5, 0.55, 0.6, 0.65]))
def test_uncertain_band_is_excluded(c, t_low, t_high):
    assume(t_low <= t_high)
    cfg = ThresholdConfig(t_high=t_high, t_low=t_low)
    score = ScoreMap(c)
    both = changed_localization(score, cfg).values & unchanged_localization(score, cfg).values
    if t_low < t_high:
        assert not both.any()
    else:
        assert np.array_equal(both, c == t_high)


@given(scores, st.floats(0, 1), st.floats(0, 1))
def test_changed_subset_of_prediction(c, a, b):
    cam_score, t_high = sorted((a, b))
    cfg = ThresholdConfig(t_high=t_high, t_low=0.0, cam_score=cam_score)
    score = ScoreMap(c)
    assert not (changed_localization(score, cfg).values & ~predict_change(score, cam_score).values).any()


@given(arrays(np.bool_, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_ground_truth_masks_partition(y):
    c, u = masks_from_ground_truth(BinaryMask(y))
    assert (c.values | u.values).all()
    assert not (c.values & u.values).any()
