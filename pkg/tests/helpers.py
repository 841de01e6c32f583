"""Shared test fixtures built from package code (unlike oracles.py)."""
import numpy as np

from disep.cam import compute_cam
from disep.grid import BinaryMask, FeatureMap
from disep.localize import ThresholdConfig, changed_localization, masks_from_ground_truth, unchanged_localization
from disep.model import (ModelConfig, SceneSample, backward_batch, bce_with_logits, forward_batch, init_params,
                         stack_samples)
from disep.retrieve import connectivity_search
from disep.separate import SeparationConfig, separation_loss


def _kink_margin(params, samples):
    """Distance of the nearest ReLU / |.| input from its kink (dead pairs excluded)."""
    c = forward_batch(params, *stack_samples(samples))
    live = np.abs(c.diff) > 0
    diff = np.abs(c.diff[live]).min(initial=np.inf)
    return min(np.abs(c.z1).min(), np.abs(c.z2).min(), diff)


def tiny_batch(seed, n=3, h=6, w=7, channels=(4, 4), full=False, margin=1e-3):
    """A few random scenes (mixed labels) and small random parameters.

    Draws are repeated until every kink is at least ``margin`` away, so a
    central difference with h=1e-5 never straddles one.
    """
    r = np.random.default_rng(seed)
    while True:
        params = init_params(ModelConfig(*channels), r)
        params.head_b[:] = r.normal(0, 0.1, params.head_b.shape)
        samples = []
        for i in range(n):
            x1 = r.random((h, w, 3))
            x2 = np.clip(x1 + r.normal(0, 0.3, x1.shape), 0, 1)
            gt = BinaryMask(r.random((h, w)) < 0.3)
            y = 1 if (full or i % 2 == 0) else 0
            samples.append(SceneSample(x1, x2, y, gt if full else None))
        if _kink_margin(params, samples) >= margin:
            return params, samples


def frozen_masks(params, samples, thresholds=ThresholdConfig(), full=False):
    """Instance/background masks at the base point; held fixed while differencing."""
    cache = forward_batch(params, *stack_samples(samples))
    out = []
    for b, s in enumerate(samples):
        if s.y_cls == 0:
            out.append(None)
            continue
        if full:
            changed, unchanged = masks_from_ground_truth(s.gt)
        else:
            score = compute_cam(FeatureMap(cache.features[b]), params.cls_w)
            changed = changed_localization(score, thresholds)
            unchanged = unchanged_localization(score, thresholds)
        out.append((connectivity_search(changed)[0], unchanged))
    return out


def objective(params, samples, masks, alpha, sep=SeparationConfig()):
    """Batch-mean scene BCE + alpha * batch-mean separation loss; returns (loss, grads)."""
    cache = forward_batch(params, *stack_samples(samples))
    nb = len(samples)
    y = np.array([s.y_cls for s in samples], dtype=float)
    losses, dl = bce_with_logits(cache.logits, y)
    total = losses.mean()
    dfeat = np.zeros_like(cache.features)
    for b, s in enumerate(samples):
        if masks[b] is None:
            br = separation_loss(FeatureMap(cache.features[b]), 0, sep)
        else:
            br = separation_loss(FeatureMap(cache.features[b]), 1, sep, *masks[b])
        total += alpha * br.l_sep / nb
        dfeat[b] = alpha * br.grad / nb
    return float(total), backward_batch(params, cache, dl / nb, dfeat)


def flatten(params):
    return np.concatenate([a.reshape(-1) for a in params.arrays()])


def unflatten(template, vec):
    out, pos = [], 0
    for a in template.arrays():
        out.append(vec[pos:pos + a.size].reshape(a.shape))
        pos += a.size
    return type(template)(*out)


def small_experiment(**train_kw):
    """A seconds-scale experiment: 16x16 scenes, a handful of iterations."""
    from disep.harness import ExperimentConfig, TrainConfig
    from disep.synth import SynthConfig

    train = dict(iterations=6, batch_size=4, lr=0.05, eval_every=3, n_train=8, n_val=4, n_test=4)
    train.update(train_kw)
    return ExperimentConfig(
        synth=SynthConfig(height=16, width=16, instance_count_min=1, instance_count_max=3,
                          instance_radius_min=1, instance_radius_max=3, min_gap=1),
        separation=SeparationConfig(alpha=0.1, warmup_iterations=3),
        model=ModelConfig(4, 4),
        train=TrainConfig(**train),
    )
