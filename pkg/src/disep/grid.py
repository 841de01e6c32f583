"""Dense 2-D / 3-D grids shared by every stage of the pipeline.

All grids are row-major. Feature maps pack the D channels of a pixel
contiguously, so a linear pixel index ``i = row * width + col`` addresses the
same location in masks, score maps and feature maps.

Grids are immutable after construction (the backing arrays are flagged
read-only), which makes them safe to share between workers.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Dim2:
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.height}x{self.width}")

    @property
    def size(self) -> int:
        return self.height * self.width

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScoreMap:
    """Normalized activation grid, every value in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"ScoreMap needs a 2-D array, got shape {v.shape}")
        Dim2(*v.shape)
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 1.0:
            raise ValueError("ScoreMap values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def dims(self) -> Dim2:
        return Dim2(*self.values.shape)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """H x W x D grid of finite float64 features."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"FeatureMap needs an (H, W, D) array, got shape {v.shape}")
        Dim2(v.shape[0], v.shape[1])
        if v.shape[2] < 1:
            raise ValueError("FeatureMap needs at least one channel")
        if not np.all(np.isfinite(v)):
            raise ValueError("FeatureMap values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def dims(self) -> Dim2:
        return Dim2(self.values.shape[0], self.values.shape[1])

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @classmethod
    def from_flat(cls, height: int, width: int, channels: int, flat) -> "FeatureMap":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != height * width * channels:
            raise ValueError(
                f"expected {height * width * channels} values for {height}x{width}x{channels}, got {flat.size}"
            )
        return cls(flat.reshape(height, width, channels))


@dataclass(frozen=True, eq=False)
class BinaryMask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"BinaryMask needs a 2-D array, got shape {v.shape}")
        Dim2(*v.shape)
        if v.dtype != np.bool_:
            if not np.all((v == 0) | (v == 1)):
                raise ValueError("BinaryMask values must be 0 or 1")
            v = v.astype(np.bool_)
        object.__setattr__(self, "values", _frozen(v))

    @property
    def dims(self) -> Dim2:
        return Dim2(*self.values.shape)

    def count(self) -> int:
        return int(self.values.sum())

    @classmethod
    def zeros(cls, dims: Dim2) -> "BinaryMask":
        return cls(np.zeros(dims.shape, dtype=bool))

    @classmethod
    def ones(cls, dims: Dim2) -> "BinaryMask":
        return cls(np.ones(dims.shape, dtype=bool))


@dataclass(frozen=True, eq=False)
class InstanceIdMask:
    """Per-pixel instance ids; 0 is background."""

    ids: np.ndarray
    count: int = field(default=-1)

    def __post_init__(self):
        v = np.asarray(self.ids)
        if v.ndim != 2:
            raise ValueError(f"InstanceIdMask needs a 2-D array, got shape {v.shape}")
        Dim2(*v.shape)
        if v.size and v.min() < 0:
            raise ValueError("instance ids must be nonnegative")
        v = v.astype(np.int64)
        object.__setattr__(self, "ids", _frozen(v))
        if self.count < 0:
            object.__setattr__(self, "count", int(v.max(initial=0)))

    @property
    def dims(self) -> Dim2:
        return Dim2(*self.ids.shape)

    def foreground(self) -> BinaryMask:
        return BinaryMask(self.ids > 0)


def pixel_features(f: FeatureMap, i: int) -> np.ndarray:
    """Return the D-vector of pixel ``i`` (linear row-major index)."""
    n = f.dims.size
    if not 0 <= i < n:
        raise IndexError(f"pixel index {i} out of range for {n} pixels")
    return f.values.reshape(n, f.channels)[i].copy()


def mask_and(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    if a.dims != b.dims:
        raise ValueError(f"mask dimensions differ: {a.dims} vs {b.dims}")
    return BinaryMask(a.values & b.values)


# --- serialization -------------------------------------------------------

def write_pgm(path, grid: BinaryMask | InstanceIdMask) -> None:
    """Plain (P2) PGM; maxval is the largest id, or 1 for binary masks."""
    if isinstance(grid, BinaryMask):
        data = grid.values.astype(np.int64)
        maxval = 1
    else:
        data = grid.ids
        maxval = max(1, int(data.max(initial=0)))
    if maxval > 65535:
        raise ValueError("PGM maxval is limited to 65535")
    h, w = data.shape
    lines = ["P2", f"{w} {h}", str(maxval)]
    lines += [" ".join(str(int(x)) for x in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM (P2) file")
    w, h = int(tokens[1]), int(tokens[2])
    if int(tokens[3]) < 1:
        raise ValueError(f"{path}: maxval must be >= 1")
    body = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if body.size != w * h:
        raise ValueError(f"{path}: expected {w * h} samples, found {body.size}")
    return body.reshape(h, w)


_FEATURE_HEADER = struct.Struct("<IIII")


def write_features(path, f: FeatureMap) -> None:
    """Flat little-endian f64 dump behind a 16-byte (h, w, channels, 0) header."""
    h, w, d = f.values.shape
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(h, w, d, 0))
        fh.write(f.values.astype("<f8").tobytes())


def read_features(path) -> FeatureMap:
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise ValueError(f"{path}: truncated feature header")
    h, w, d, _ = _FEATURE_HEADER.unpack_from(raw)
    body = raw[_FEATURE_HEADER.size:]
    if len(body) != h * w * d * 8:
        raise ValueError(f"{path}: expected {h * w * d * 8} payload bytes, found {len(body)}")
    return FeatureMap.from_flat(h, w, d, np.frombuffer(body, dtype="<f8"))
