import numpy as np
import pytest
from hypothesis import given, strategies as st

from disep.model import (CheckpointError, ModelConfig, ModelParams, SceneSample, backward, bce_with_logits,
                         classification_loss, forward, init_params, load_checkpoint, save_checkpoint, sgd_step)
from helpers import flatten, frozen_masks, objective, tiny_batch, unflatten
from oracles import central_difference, max_rel_error, naive_forward


def random_sample(r, h=8, w=8, y=1):
    x1 = r.random((h, w, 3))
    return SceneSample(x1, np.clip(x1 + r.normal(0, 0.2, x1.shape), 0, 1), y)


def test_classification_loss_examples():
    loss, d = classification_loss(0.0, 1)
    assert loss == pytest.approx(np.log(2), abs=1e-15) and d == -0.5
    loss, d = classification_loss(50.0, 1)
    assert 0 <= loss <= 1e-20 and abs(d) <= 1e-20
    loss, d = classification_loss(-3.0, 0)
    # frozen from math.log1p(math.exp(-3)) and 1 / (1 + math.exp(3))
    assert loss == pytest.approx(0.04858735157374206, rel=1e-14)
    assert d == pytest.approx(0.04742587317756678, rel=1e-14)
    loss, d = classification_loss(-800.0, 1)
    assert np.isfinite(loss) and loss == pytest.approx(800.0) and d == -1.0


@given(z=st.floats(-700, 700), y=st.sampled_from([0.0, 1.0]))
def test_bce_gradient_is_sigmoid_minus_target(z, y):
    loss, d = bce_with_logits(z, y)
    assert loss >= 0 and np.isfinite(loss)
    assert -1.0 <= d <= 1.0
    assert (d >= 0) == (y == 0.0) or d == 0.0


def test_identical_inputs_give_bias_only_features(rng):
    params = init_params(ModelConfig(4, 3), rng)
    x = rng.random((5, 6, 3))
    f, logit = forward(params, SceneSample(x, x.copy(), 0))
    assert not f.values.any() and logit == 0.0
    params.head_b[:] = [0.5, -1.0, 2.0]
    f, logit = forward(params, SceneSample(x, x.copy(), 0))
    assert np.all(f.values == params.head_b)
    assert logit == pytest.approx(params.head_b @ params.cls_w, abs=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_forward_matches_loop_oracle(seed):
    r = np.random.default_rng(seed)
    params = init_params(ModelConfig(4, 3), r)
    params.conv1_b[:] = r.normal(0, 0.1, 4)
    params.head_b[:] = r.normal(0, 0.1, 3)
    params.cls_b[...] = 0.3
    s = random_sample(r)
    f, logit = forward(params, s)
    feats, ref = naive_forward(*params.arrays(), s.x_t1, s.x_t2)
    assert np.max(np.abs(f.values - feats)) < 1e-12
    assert abs(logit - ref) < 1e-12


@given(st.integers(0, 10_000))
def test_temporal_symmetry_is_exact(seed):
    r = np.random.default_rng(seed)
    params = init_params(ModelConfig(3, 2), r)
    s = random_sample(r, 5, 4)
    f, logit = forward(params, s)
    g, logit2 = forward(params, s.swapped())
    assert np.array_equal(f.values, g.values) and logit == logit2


def test_backward_zero_upstream_is_zero(rng):
    params = init_params(ModelConfig(3, 2), rng)
    s = random_sample(rng, 4, 4)
    grads = backward(params, s, 0.0, np.zeros((4, 4, 2)))
    assert all(not a.any() for a in grads.arrays())
    with pytest.raises(ValueError):
        backward(params, s, 1.0, np.zeros((3, 4, 2)))


def test_abs_subgradient_at_zero(rng):
    # identical inputs: every |e1 - e2| sits at its kink, so only head bias and classifier move
    params = init_params(ModelConfig(3, 2), rng)
    x = rng.random((4, 4, 3))
    grads = backward(params, SceneSample(x, x.copy(), 1), 1.0, rng.standard_normal((4, 4, 2)))
    for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w"):
        assert not getattr(grads, name).any(), name
    assert grads.head_b.any() and grads.cls_b != 0


def _check_model_gradient(seed, alpha, full=False, tol=1e-5):
    params, samples = tiny_batch(seed, full=full)
    masks = frozen_masks(params, samples, full=full)
    _, grads = objective(params, samples, masks, alpha)
    numeric = central_difference(lambda v: objective(unflatten(params, v), samples, masks, alpha)[0],
                                 flatten(params), h=1e-5)
    return max_rel_error(flatten(grads), numeric)


@pytest.mark.parametrize("alpha", [0.0, 0.1])
@pytest.mark.parametrize("seed", range(5))
def test_end_to_end_gradient_matches_finite_differences(seed, alpha):
    assert _check_model_gradient(seed, alpha) < 1e-5


def test_sgd_step_examples():
    p = ModelParams(*[np.ones(s) for s in [(3, 3, 3, 1), (1,), (3, 3, 1, 1), (1,), (1, 1), (1,), (1,), ()]])
    g = p.map(np.ones_like)
    out = sgd_step(p, g, 0.1)
    assert all(np.all(a == 0.9) for a in out.arrays())
    assert all(np.array_equal(a, b) for a, b in zip(sgd_step(p, p.map(np.zeros_like), 0.1).arrays(), p.arrays()))
    with pytest.raises(ValueError):
        sgd_step(p, g, 0.0)
    g.cls_b = np.array(np.nan)
    with pytest.raises(FloatingPointError):
        sgd_step(p, g, 0.1)


def test_init_is_deterministic():
    a = init_params(ModelConfig(), np.random.default_rng(7))
    b = init_params(ModelConfig(), np.random.default_rng(7))
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_rejects_mismatched_classifier():
    p = init_params(ModelConfig(2, 3), np.random.default_rng(0))
    with pytest.raises(ValueError):
        ModelParams(p.conv1_w, p.conv1_b, p.conv2_w, p.conv2_b, p.head_w, p.head_b, np.zeros(2), p.cls_b)


def test_forward_rejects_tiny_images(rng):
    params = init_params(ModelConfig(2, 2), rng)
    with pytest.raises(ValueError):
        forward(params, SceneSample(rng.random((2, 5, 3)), rng.random((2, 5, 3)), 0))


def test_checkpoint_roundtrip_and_corruption(tmp_path, rng):
    params = init_params(ModelConfig(3, 2), rng)
    path = tmp_path / "ck.bin"
    save_checkpoint(params, path)
    back = load_checkpoint(path)
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), back.arrays()))
    assert back.config == ModelConfig(3, 2)
    raw = bytearray(path.read_bytes())
    raw[10] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.bin")
