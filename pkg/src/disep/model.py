"""Toy bi-temporal change classifier with hand-written backprop.

    e_t   = relu(conv3x3(relu(conv3x3(x_t))))    shared weights for t1, t2
    d     = |e_1 - e_2|
    F     = d @ head_w + head_b                   1x1 conv -> (H, W, D)
    logit = mean_pixels(F) @ cls_w + cls_b

Convolutions are stride 1 with zero padding, so features keep the input
resolution. Everything is float64 and batched over a leading sample axis.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .grid import BinaryMask, FeatureMap, InstanceIdMask

_OFFSETS = [(dy, dx) for dy in range(3) for dx in range(3)]


@dataclass(frozen=True)
class ModelConfig:
    hidden_channels: int = 8
    feature_channels: int = 8

    def __post_init__(self):
        if self.hidden_channels < 1 or self.feature_channels < 1:
            raise ValueError("channel counts must be >= 1")


@dataclass
class ModelParams:
    conv1_w: np.ndarray  # (3, 3, 3, C)
    conv1_b: np.ndarray  # (C,)
    conv2_w: np.ndarray  # (3, 3, C, C)
    conv2_b: np.ndarray  # (C,)
    head_w: np.ndarray  # (C, D)
    head_b: np.ndarray  # (D,)
    cls_w: np.ndarray  # (D,)
    cls_b: np.ndarray  # ()

    def __post_init__(self):
        if self.cls_w.shape[0] != self.head_w.shape[1]:
            raise ValueError("classifier weight length must equal the head's output channels")

    def names(self) -> list[str]:
        return [f.name for f in fields(self)]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.names()]

    def map(self, fn) -> "ModelParams":
        return ModelParams(*[fn(a) for a in self.arrays()])

    def zip_map(self, other: "ModelParams", fn) -> "ModelParams":
        return ModelParams(*[fn(a, b) for a, b in zip(self.arrays(), other.arrays())])

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    @property
    def config(self) -> ModelConfig:
        return ModelConfig(self.conv1_w.shape[3], self.head_w.shape[1])


ParamGradients = ModelParams


@dataclass(frozen=True)
class SceneSample:
    x_t1: np.ndarray  # (H, W, 3) in [0, 1]
    x_t2: np.ndarray
    y_cls: int
    gt: BinaryMask | None = None
    gt_instances: InstanceIdMask | None = None

    def __post_init__(self):
        if self.x_t1.shape != self.x_t2.shape or self.x_t1.ndim != 3 or self.x_t1.shape[2] != 3:
            raise ValueError(f"images must share an (H, W, 3) shape, got {self.x_t1.shape} and {self.x_t2.shape}")
        if self.y_cls not in (0, 1):
            raise ValueError(f"y_cls must be 0 or 1, got {self.y_cls}")
        if self.gt is not None and self.gt.dims.shape != self.x_t1.shape[:2]:
            raise ValueError("ground-truth mask must match the image size")
        if self.gt_instances is not None and self.gt_instances.dims.shape != self.x_t1.shape[:2]:
            raise ValueError("ground-truth instances must match the image size")

    @property
    def shape(self) -> tuple[int, int]:
        return self.x_t1.shape[:2]

    def swapped(self) -> "SceneSample":
        return SceneSample(self.x_t2, self.x_t1, self.y_cls, self.gt, self.gt_instances)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    c, d = cfg.hidden_channels, cfg.feature_channels
    he = lambda fan_in, shape: rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return ModelParams(
        conv1_w=he(27, (3, 3, 3, c)),
        conv1_b=np.zeros(c),
        conv2_w=he(9 * c, (3, 3, c, c)),
        conv2_b=np.zeros(c),
        head_w=rng.standard_normal((c, d)) * np.sqrt(1.0 / c),
        head_b=np.zeros(d),
        cls_w=rng.standard_normal(d) * np.sqrt(1.0 / d),
        cls_b=np.zeros(()),
    )


# --- convolution ------------------------------------------------------------

def _pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))


def _conv(xp: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 convolution of an already padded (N, H+2, W+2, Cin) batch."""
    n, hp, wp, _ = xp.shape
    h, wd = hp - 2, wp - 2
    out = np.empty((n, h, wd, w.shape[-1]))
    out[...] = b
    for dy, dx in _OFFSETS:
        out += xp[:, dy:dy + h, dx:dx + wd, :] @ w[dy, dx]
    return out


def _conv_grad_w(xp: np.ndarray, dout: np.ndarray) -> np.ndarray:
    n, h, wd, cout = dout.shape
    g = dout.reshape(-1, cout)
    cin = xp.shape[-1]
    dw = np.empty((3, 3, cin, cout))
    for dy, dx in _OFFSETS:
        dw[dy, dx] = xp[:, dy:dy + h, dx:dx + wd, :].reshape(-1, cin).T @ g
    return dw


def _conv_grad_x(dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, h, wd, _ = dout.shape
    dxp = np.zeros((n, h + 2, wd + 2, w.shape[2]))
    for dy, dx in _OFFSETS:
        dxp[:, dy:dy + h, dx:dx + wd, :] += dout @ w[dy, dx].T
    return dxp[:, 1:-1, 1:-1, :]


@dataclass
class ForwardCache:
    xp: np.ndarray  # padded inputs, t1 batch then t2 batch
    z1: np.ndarray
    a1p: np.ndarray  # padded relu(z1)
    z2: np.ndarray
    diff: np.ndarray  # e1 - e2
    d: np.ndarray
    features: np.ndarray  # (B, H, W, D)
    gap: np.ndarray  # (B, D)
    logits: np.ndarray  # (B,)


def forward_batch(params: ModelParams, x1: np.ndarray, x2: np.ndarray) -> ForwardCache:
    if x1.shape != x2.shape or x1.ndim != 4:
        raise ValueError("expected two (B, H, W, 3) image batches of equal shape")
    b, h, w, _ = x1.shape
    if h < 3 or w < 3:
        raise ValueError(f"images must be at least 3x3, got {h}x{w}")
    xp = _pad(np.concatenate([x1, x2], axis=0))
    z1 = _conv(xp, params.conv1_w, params.conv1_b)
    a1p = _pad(np.maximum(z1, 0.0))
    z2 = _conv(a1p, params.conv2_w, params.conv2_b)
    e = np.maximum(z2, 0.0)
    diff = e[:b] - e[b:]
    d = np.abs(diff)
    feats = d @ params.head_w + params.head_b
    gap = feats.mean(axis=(1, 2))
    logits = gap @ params.cls_w + params.cls_b
    return ForwardCache(xp, z1, a1p, z2, diff, d, feats, gap, logits)


def backward_batch(params: ModelParams, cache: ForwardCache, dlogits: np.ndarray,
                   dfeatures: np.ndarray | None = None,
                   dpixel_logits: np.ndarray | None = None) -> ParamGradients:
    """Reverse pass.

    ``dlogits`` (B,) is the upstream gradient of the scene logits,
    ``dfeatures`` (B, H, W, D) a direct gradient on the features (how the
    separation loss enters), ``dpixel_logits`` (B, H, W) a gradient on the
    per-pixel logits ``F @ cls_w + cls_b`` used by fully-supervised training.
    """
    feats = cache.features
    b, h, w, dch = feats.shape
    dlogits = np.asarray(dlogits, dtype=np.float64).reshape(b)
    dF = np.zeros_like(feats) if dfeatures is None else np.array(dfeatures, dtype=np.float64)
    if dF.shape != feats.shape:
        raise ValueError(f"feature gradient shape {dF.shape} does not match features {feats.shape}")

    d_cls_w = dlogits @ cache.gap
    d_cls_b = dlogits.sum()
    dF += (dlogits / (h * w))[:, None, None, None] * params.cls_w
    if dpixel_logits is not None:
        dpix = np.asarray(dpixel_logits, dtype=np.float64)
        if dpix.shape != (b, h, w):
            raise ValueError(f"pixel-logit gradient shape {dpix.shape} does not match ({b}, {h}, {w})")
        d_cls_w = d_cls_w + np.einsum("bhw,bhwd->d", dpix, feats)
        d_cls_b = d_cls_b + dpix.sum()
        dF += dpix[..., None] * params.cls_w

    dF2 = dF.reshape(-1, dch)
    c = params.head_w.shape[0]
    d_head_w = cache.d.reshape(-1, c).T @ dF2
    d_head_b = dF2.sum(axis=0)
    dd = dF @ params.head_w.T
    # subgradient of |.| at 0 is 0
    de1 = dd * np.sign(cache.diff)
    de = np.concatenate([de1, -de1], axis=0)

    dz2 = de * (cache.z2 > 0)
    d_conv2_w = _conv_grad_w(cache.a1p, dz2)
    d_conv2_b = dz2.sum(axis=(0, 1, 2))
    dz1 = _conv_grad_x(dz2, params.conv2_w) * (cache.z1 > 0)
    d_conv1_w = _conv_grad_w(cache.xp, dz1)
    d_conv1_b = dz1.sum(axis=(0, 1, 2))
    return ModelParams(d_conv1_w, d_conv1_b, d_conv2_w, d_conv2_b, d_head_w, d_head_b,
                       d_cls_w, np.asarray(d_cls_b, dtype=np.float64).reshape(()))


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.x_t1 for s in samples]), np.stack([s.x_t2 for s in samples])


def forward(params: ModelParams, s: SceneSample) -> tuple[FeatureMap, float]:
    cache = forward_batch(params, s.x_t1[None], s.x_t2[None])
    return FeatureMap(cache.features[0]), float(cache.logits[0])


def backward(params: ModelParams, s: SceneSample, dlogit: float, dfeatures) -> ParamGradients:
    cache = forward_batch(params, s.x_t1[None], s.x_t2[None])
    dfeatures = np.asarray(dfeatures, dtype=np.float64)
    if dfeatures.shape != cache.features.shape[1:]:
        raise ValueError(f"feature gradient shape {dfeatures.shape} does not match {cache.features.shape[1:]}")
    return backward_batch(params, cache, np.array([dlogit]), dfeatures[None])


def pixel_logits(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return features @ params.cls_w + params.cls_b


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def bce_with_logits(z, y):
    """Elementwise stable sigmoid cross-entropy and its derivative in z."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return loss, _sigmoid(z) - y


def classification_loss(logit: float, y_cls: int) -> tuple[float, float]:
    loss, grad = bce_with_logits(logit, y_cls)
    return float(loss), float(grad)


def sgd_step(params: ModelParams, grads: ParamGradients, lr: float) -> ModelParams:
    if not lr > 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    for name, g in zip(grads.names(), grads.arrays()):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    return params.zip_map(grads, lambda p, g: p - lr * g)


# --- checkpoints --------------------------------------------------------------

def save_checkpoint(params: ModelParams, path) -> None:
    """``path`` gets the flat little-endian f64 payload, ``path.manifest`` the layout."""
    path = Path(path)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    lines = [f"{name} {' '.join(str(s) for s in a.shape) or 'scalar'}"
             for name, a in zip(params.names(), params.arrays())]
    lines.append(f"sha256 {hashlib.sha256(payload).hexdigest()}")
    path.write_bytes(payload)
    Path(str(path) + ".manifest").write_text("\n".join(lines) + "\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    manifest = Path(str(path) + ".manifest")
    try:
        payload = path.read_bytes()
        lines = manifest.read_text().split("\n")
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    shapes, digest = {}, None
    for line in filter(None, lines):
        name, *rest = line.split()
        if name == "sha256":
            digest = rest[0] if rest else None
        elif rest == ["scalar"]:
            shapes[name] = ()
        else:
            try:
                shapes[name] = tuple(int(s) for s in rest)
            except ValueError:
                raise CheckpointError(f"{manifest}: bad shape line {line!r}") from None
    expected = [f.name for f in fields(ModelParams)]
    if list(shapes) != expected:
        raise CheckpointError(f"{manifest}: expected layers {expected}, found {list(shapes)}")
    if digest != hashlib.sha256(payload).hexdigest():
        raise CheckpointError(f"{path}: checksum mismatch (corrupted checkpoint)")
    flat = np.frombuffer(payload, dtype="<f8")
    total = sum(int(np.prod(s)) for s in shapes.values())
    if flat.size != total:
        raise CheckpointError(f"{path}: expected {total} values, found {flat.size}")
    arrays, off = [], 0
    for s in shapes.values():
        n = int(np.prod(s))
        arrays.append(flat[off:off + n].reshape(s).astype(np.float64))
        off += n
    try:
        params = ModelParams(*arrays)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    if not params.all_finite():
        raise CheckpointError(f"{path}: non-finite parameters")
    return params
