"""Instance retrieval by raster-scan 8-connectivity search.

Each foreground pixel is visited in row-major order and looks at its already
visited neighbours (W, NW, N, NE):

* no labelled neighbour: open a new provisional instance;
* one distinct label: join it;
* several labels: join the smallest and record that the others are the same
  instance.

The "merge" bookkeeping is a union-find over provisional labels, resolved by a
second pass that also renumbers instances 1..K in order of first appearance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .grid import BinaryMask, FeatureMap, InstanceIdMask


@numba.njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit(cache=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra < rb:
        parent[rb] = ra
    elif rb < ra:
        parent[ra] = rb


@numba.njit(cache=True)
def _two_pass(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    # provisional labels never exceed the number of foreground pixels
    parent = np.zeros(h * w + 1, dtype=np.int64)
    next_label = 1
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            best = 0
            for dr, dc in ((0, -1), (-1, -1), (-1, 0), (-1, 1)):
                rr = r + dr
                cc = c + dc
                if rr < 0 or cc < 0 or cc >= w:
                    continue
                lab = labels[rr, cc]
                if lab == 0:
                    continue
                if best == 0:
                    best = lab
                elif lab != best:
                    _union(parent, best, lab)
                    if lab < best:
                        best = lab
            if best == 0:
                parent[next_label] = next_label
                labels[r, c] = next_label
                next_label += 1
            else:
                labels[r, c] = best

    canon = np.zeros(next_label, dtype=np.int64)
    k = 0
    for r in range(h):
        for c in range(w):
            lab = labels[r, c]
            if lab == 0:
                continue
            root = _find(parent, lab)
            if canon[root] == 0:
                k += 1
                canon[root] = k
            labels[r, c] = canon[root]
    return labels, k


@dataclass(frozen=True)
class InstanceTable:
    """Per-instance pixel counts and sorted linear pixel indices (k = 1..K)."""

    pixel_indices: tuple[np.ndarray, ...]

    @property
    def count(self) -> int:
        return len(self.pixel_indices)

    def pixel_count(self, k: int) -> int:
        return int(self.pixel_indices[k - 1].size)

    @classmethod
    def from_id_mask(cls, id_mask: InstanceIdMask) -> "InstanceTable":
        flat = id_mask.ids.reshape(-1)
        order = np.argsort(flat, kind="stable")
        ids = flat[order]
        bounds = np.searchsorted(ids, np.arange(1, id_mask.count + 2))
        return cls(tuple(order[bounds[k]:bounds[k + 1]] for k in range(id_mask.count)))


def connectivity_search(m_c: BinaryMask) -> tuple[InstanceIdMask, InstanceTable]:
    """Label the 8-connected components of ``m_c``.

    Ids are canonical: 1..K in order of first appearance in raster order, so
    the result is a deterministic function of the mask.
    """
    labels, k = _two_pass(np.ascontiguousarray(m_c.values))
    id_mask = InstanceIdMask(labels, count=int(k))
    return id_mask, InstanceTable.from_id_mask(id_mask)


def count_components(mask: BinaryMask) -> int:
    return int(_two_pass(np.ascontiguousarray(mask.values))[1])


def extract_instance_features(f: FeatureMap, id_mask: InstanceIdMask, k: int) -> FeatureMap:
    """Features of instance ``k``; zero outside it."""
    if f.dims != id_mask.dims:
        raise ValueError(f"feature map {f.dims} and id mask {id_mask.dims} differ")
    if not 1 <= k <= id_mask.count:
        raise IndexError(f"instance {k} out of range 1..{id_mask.count}")
    return FeatureMap(f.values * (id_mask.ids == k)[..., None])


def extract_background_features(f: FeatureMap, m_uc: BinaryMask) -> FeatureMap:
    if f.dims != m_uc.dims:
        raise ValueError(f"feature map {f.dims} and mask {m_uc.dims} differ")
    return FeatureMap(f.values * m_uc.values[..., None])
