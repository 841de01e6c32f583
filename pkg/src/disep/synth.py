"""Seeded bi-temporal scenes with dense, well-separated changed instances.

Every sample is a pure function of ``(cfg, index)``; the generator for sample
``index`` is seeded with ``(cfg.seed, index)``.

Changed scenes get N rectangles / ellipses whose brightness shifts by
``+-shift`` in the second image. Shapes are separated by at least
``min_gap`` background pixels in the Chebyshev sense, so each one is its own
8-connected component. With probability ``cluster_prob`` a new shape is
placed as close to an existing one as the gap allows, which is what makes the
scenes "dense" and prone to lumping.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import BinaryMask, InstanceIdMask, write_pgm
from .model import SceneSample


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 64
    instance_count_min: int = 4
    instance_count_max: int = 10
    instance_radius_min: int = 2
    instance_radius_max: int = 5
    min_gap: int = 3
    texture_noise_sd: float = 0.08
    p_unchanged_scene: float = 0.5
    shift: float = 0.3
    cluster_prob: float = 0.6
    distractors: int = 3
    max_retries: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.height < 3 or self.width < 3:
            raise ValueError("scenes must be at least 3x3")
        if not 1 <= self.instance_count_min <= self.instance_count_max:
            raise ValueError("need 1 <= instance_count_min <= instance_count_max")
        if not 1 <= self.instance_radius_min <= self.instance_radius_max:
            raise ValueError("need 1 <= instance_radius_min <= instance_radius_max")
        if 2 * self.instance_radius_max + 1 > min(self.height, self.width):
            raise ValueError("largest instance does not fit in the scene")
        if self.min_gap < 1:
            raise ValueError("min_gap must be >= 1")
        if self.texture_noise_sd < 0:
            raise ValueError("texture_noise_sd must be >= 0")
        if not 0.0 <= self.p_unchanged_scene <= 1.0:
            raise ValueError("p_unchanged_scene must be in [0, 1]")
        if not 0.0 <= self.cluster_prob <= 1.0:
            raise ValueError("cluster_prob must be in [0, 1]")


class PlacementError(RuntimeError):
    pass


def _dilate(mask: np.ndarray, r: int) -> np.ndarray:
    """Chebyshev (square) dilation by radius r."""
    h, w = mask.shape
    padded = np.pad(mask, r)
    rows = np.zeros((h + 2 * r, w), dtype=bool)
    for dx in range(2 * r + 1):
        rows |= padded[:, dx:dx + w]
    out = np.zeros((h, w), dtype=bool)
    for dy in range(2 * r + 1):
        out |= rows[dy:dy + h]
    return out


def _shape_mask(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """A random rectangle or ellipse at a random position."""
    h, w = cfg.height, cfg.width
    ry, rx = rng.integers(cfg.instance_radius_min, cfg.instance_radius_max + 1, size=2)
    cy = rng.integers(ry, h - ry)
    cx = rng.integers(rx, w - rx)
    yy, xx = np.ogrid[:h, :w]
    if rng.random() < 0.5:
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    return ((yy - cy) / (ry + 0.5)) ** 2 + ((xx - cx) / (rx + 0.5)) ** 2 <= 1.0


def place_instances(rng: np.random.Generator, cfg: SynthConfig, n: int) -> np.ndarray:
    """Per-shape ids (1..n, placement order) for n mutually separated shapes."""
    ids = np.zeros((cfg.height, cfg.width), dtype=np.int64)
    blocked = np.zeros((cfg.height, cfg.width), dtype=bool)
    near = np.zeros_like(blocked)
    for k in range(1, n + 1):
        want_close = k > 1 and rng.random() < cfg.cluster_prob
        for attempt in range(cfg.max_retries):
            shape = _shape_mask(rng, cfg)
            if (shape & blocked).any():
                continue
            # half the budget goes to tight placements, then any legal spot
            if want_close and attempt < cfg.max_retries // 2 and not (shape & near).any():
                continue
            break
        else:
            raise PlacementError(
                f"could not place instance {k} of {n} with min_gap={cfg.min_gap} "
                f"in a {cfg.height}x{cfg.width} scene after {cfg.max_retries} tries"
            )
        ids[shape] = k
        fg = ids > 0
        blocked = _dilate(fg, cfg.min_gap)
        near = _dilate(fg, cfg.min_gap + 2)
    return ids


def canonical_ids(ids: np.ndarray) -> np.ndarray:
    """Renumber nonzero ids 1..K by first appearance in raster order."""
    flat = ids.reshape(-1)
    uniq, first = np.unique(flat[flat > 0], return_index=True)
    order = uniq[np.argsort(first)]
    lut = np.zeros(int(flat.max(initial=0)) + 1, dtype=np.int64)
    lut[order] = np.arange(1, order.size + 1)
    return lut[ids]


def _background(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    base = rng.uniform(0.35, 0.65, size=3)
    yy, xx = np.mgrid[:h, :w] / max(h, w)
    tilt = rng.uniform(-0.1, 0.1, size=(2, 3))
    img = base + yy[..., None] * tilt[0] + xx[..., None] * tilt[1]
    # static structures present at both dates
    for _ in range(cfg.distractors):
        mask = _shape_mask(rng, cfg)
        img[mask] += rng.uniform(-0.15, 0.15, size=3)
    return img


def generate_sample(cfg: SynthConfig, index: int) -> SceneSample:
    rng = np.random.default_rng([cfg.seed, index])
    h, w = cfg.height, cfg.width
    base = _background(rng, cfg)
    x2 = base.copy()
    if rng.random() < cfg.p_unchanged_scene:
        y_cls = 0
        ids = np.zeros((h, w), dtype=np.int64)
    else:
        y_cls = 1
        n = int(rng.integers(cfg.instance_count_min, cfg.instance_count_max + 1))
        ids = canonical_ids(place_instances(rng, cfg, n))
        for k in range(1, n + 1):
            sign = 1.0 if rng.random() < 0.5 else -1.0
            sel = ids == k
            x2[sel] += sign * cfg.shift
    sd = cfg.texture_noise_sd
    x1 = np.clip(base + rng.normal(0.0, sd, size=base.shape), 0.0, 1.0)
    x2 = np.clip(x2 + rng.normal(0.0, sd, size=base.shape), 0.0, 1.0)
    gt = BinaryMask(ids > 0)
    return SceneSample(x1, x2, y_cls, gt, InstanceIdMask(ids))


def generate_split(cfg: SynthConfig, n_train: int, n_val: int, n_test: int):
    """Disjoint, deterministic index ranges: train, then val, then test."""
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("every split needs at least one sample")
    train = [generate_sample(cfg, i) for i in range(n_train)]
    val = [generate_sample(cfg, n_train + i) for i in range(n_val)]
    test = [generate_sample(cfg, n_train + n_val + i) for i in range(n_test)]
    return train, val, test


def _write_ppm(path, img: np.ndarray) -> None:
    h, w, _ = img.shape
    q = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.int64)
    rows = [" ".join(str(v) for v in q[r].reshape(-1)) for r in range(h)]
    Path(path).write_text("\n".join(["P3", f"{w} {h}", "255", *rows]) + "\n")


def dump_samples(samples, out_dir, prefix: str = "sample") -> Path:
    """Write t1/t2 PPMs, gt and instance PGMs and a manifest line per sample."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["name y_cls instances t1 t2 gt gt_instances"]
    for i, s in enumerate(samples):
        name = f"{prefix}_{i:05d}"
        _write_ppm(out / f"{name}_t1.ppm", s.x_t1)
        _write_ppm(out / f"{name}_t2.ppm", s.x_t2)
        write_pgm(out / f"{name}_gt.pgm", s.gt)
        write_pgm(out / f"{name}_inst.pgm", s.gt_instances)
        lines.append(f"{name} {s.y_cls} {s.gt_instances.count} {name}_t1.ppm {name}_t2.ppm "
                     f"{name}_gt.pgm {name}_inst.pgm")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
