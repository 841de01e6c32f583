"""Pixel-to-centroid separation loss and its analytic gradient.

Three groups of pixels are pulled toward their own centroid:

* changed-in-changed (CC): each retrieved changed instance of a changed scene,
* unchanged-in-changed (CU): the reliable background of a changed scene,
* unchanged-in-unchanged (UU): every pixel of an unchanged scene.

For a group G with centroid p, the branch term is mean_{i in G} ||F_i - p||^2
and its gradient is 2/|G| (F_i - p) on the members.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import BinaryMask, FeatureMap, InstanceIdMask
from .retrieve import InstanceTable

SCOPES = ("CC", "CC+CU", "CC+CU+UU")


@dataclass(frozen=True)
class SeparationConfig:
    alpha: float = 0.1
    scope: str = "CC+CU+UU"
    warmup_iterations: int = 200

    def __post_init__(self):
        if not self.alpha >= 0.0 or not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be a finite value >= 0, got {self.alpha}")
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if self.warmup_iterations < 0:
            raise ValueError("warmup_iterations must be >= 0")

    @property
    def use_cu(self) -> bool:
        return self.scope != "CC"

    @property
    def use_uu(self) -> bool:
        return self.scope == "CC+CU+UU"


@dataclass(frozen=True)
class InstanceStats:
    centroids: np.ndarray  # (K, D), row k-1 is instance k
    counts: np.ndarray  # (K,)
    background_centroid: np.ndarray | None
    background_count: int
    image_centroid: np.ndarray


@dataclass
class LossBreakdown:
    l_pc: float
    l_puc: float
    l_pu: float
    grad: np.ndarray

    @property
    def l_sep(self) -> float:
        return self.l_pc + self.l_puc + self.l_pu


def _group_sums(x: np.ndarray, labels: np.ndarray, n_groups: int) -> np.ndarray:
    return np.stack([np.bincount(labels, weights=x[:, j], minlength=n_groups + 1)
                     for j in range(x.shape[1])], axis=1)


def labelled_loss(x: np.ndarray, labels: np.ndarray, n_groups: int,
                  through_centroid: bool = True) -> tuple[float, np.ndarray]:
    """Sum over groups 1..n_groups of the mean squared distance to the group centroid.

    ``x`` is (N, D), ``labels`` is (N,) with 0 meaning "not in any group".
    With ``through_centroid`` the centroid's own dependence on x is kept in the
    gradient; the extra term is a per-group mean of residuals, which is zero up
    to rounding, so both settings give the same gradient.
    """
    grad = np.zeros_like(x)
    if n_groups == 0:
        return 0.0, grad
    counts = np.bincount(labels, minlength=n_groups + 1).astype(np.float64)
    if np.any(counts[1:] == 0):
        raise ValueError("every instance must contain at least one pixel")
    member = labels > 0
    lab = labels[member]
    xm = x[member]
    # shift each group by one of its own pixels: identical members give exact zeros
    _, first = np.unique(lab, return_index=True)
    ref = np.zeros((n_groups + 1, x.shape[1]))
    ref[lab[first]] = xm[first]
    shifted = xm - ref[lab]
    counts[0] = 1.0
    centroids = _group_sums(shifted, lab, n_groups) / counts[:, None]
    resid = shifted - centroids[lab]
    n_i = counts[lab][:, None]
    # one instance contributes its own mean; instances are summed, not re-averaged
    loss = float(np.sum(resid * resid / n_i))
    g = 2.0 * resid / n_i
    if through_centroid:
        # d/dx_i of the centroid terms: -(2/N^2) * sum_j (x_j - p) over the same group
        rsum = _group_sums(resid, lab, n_groups)
        g -= 2.0 * rsum[lab] / (n_i * n_i)
    grad[member] = g
    return loss, grad


def _flat(f: FeatureMap) -> np.ndarray:
    return f.values.reshape(-1, f.channels)


def instance_stats(f: FeatureMap, id_mask: InstanceIdMask, m_uc: BinaryMask | None = None) -> InstanceStats:
    x = _flat(f)
    ids = id_mask.ids.reshape(-1)
    k = id_mask.count
    counts = np.bincount(ids, minlength=k + 1)[1:]
    sums = _group_sums(x, ids, k)[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        centroids = sums / counts[:, None]
    bg_centroid, n_uc = None, 0
    if m_uc is not None:
        sel = m_uc.values.reshape(-1)
        n_uc = int(sel.sum())
        if n_uc:
            bg_centroid = x[sel].mean(axis=0)
    return InstanceStats(centroids, counts, bg_centroid, n_uc, x.mean(axis=0))


def changed_branch(f: FeatureMap, table: InstanceTable, id_mask: InstanceIdMask) -> tuple[float, np.ndarray]:
    if f.dims != id_mask.dims:
        raise ValueError(f"feature map {f.dims} and id mask {id_mask.dims} differ")
    if table.count != id_mask.count:
        raise ValueError("instance table does not match the id mask")
    for k in range(1, table.count + 1):
        if table.pixel_count(k) == 0:
            raise ValueError(f"instance {k} is empty")
    loss, grad = labelled_loss(_flat(f), id_mask.ids.reshape(-1), id_mask.count)
    return loss, grad.reshape(f.values.shape)


def background_branch(f: FeatureMap, m_uc: BinaryMask) -> tuple[float, np.ndarray]:
    """Unchanged-in-changed term; an empty mask contributes nothing."""
    if f.dims != m_uc.dims:
        raise ValueError(f"feature map {f.dims} and mask {m_uc.dims} differ")
    labels = m_uc.values.reshape(-1).astype(np.int64)
    n = int(labels.sum())
    loss, grad = labelled_loss(_flat(f), labels, 1 if n else 0)
    return loss, grad.reshape(f.values.shape)


def unchanged_image_branch(f: FeatureMap) -> tuple[float, np.ndarray]:
    x = _flat(f)
    loss, grad = labelled_loss(x, np.ones(x.shape[0], dtype=np.int64), 1)
    return loss, grad.reshape(f.values.shape)


def separation_loss(f: FeatureMap, y_cls: int, cfg: SeparationConfig,
                    id_mask: InstanceIdMask | None = None,
                    m_uc: BinaryMask | None = None) -> LossBreakdown:
    """Branch losses for one sample, gated by scene label and sampling scope.

    Changed scenes (y_cls=1) contribute the CC and CU terms and need
    ``id_mask`` / ``m_uc``; unchanged scenes contribute only the UU term.
    """
    zero = np.zeros_like(f.values)
    l_pc = l_puc = l_pu = 0.0
    grad = zero.copy()
    if y_cls == 1:
        if id_mask is None or m_uc is None:
            raise ValueError("changed samples need an instance id mask and a background mask")
        if id_mask.dims != f.dims or m_uc.dims != f.dims:
            raise ValueError("feature map, id mask and background mask must share dimensions")
        table = InstanceTable.from_id_mask(id_mask)
        l_pc, g = changed_branch(f, table, id_mask)
        grad += g
        if cfg.use_cu:
            l_puc, g = background_branch(f, m_uc)
            grad += g
    elif y_cls == 0:
        if cfg.use_uu:
            l_pu, g = unchanged_image_branch(f)
            grad += g
    else:
        raise ValueError(f"y_cls must be 0 or 1, got {y_cls}")
    return LossBreakdown(l_pc, l_puc, l_pu, grad)


def total_loss(l_cls: float, breakdown: LossBreakdown, cfg: SeparationConfig, iteration: int) -> float:
    if cfg.alpha < 0:
        raise ValueError("alpha must be >= 0")
    if l_cls < 0:
        raise ValueError("classification loss must be >= 0")
    if iteration >= cfg.warmup_iterations:
        return l_cls + cfg.alpha * breakdown.l_sep
    return l_cls


def separation_active(cfg: SeparationConfig, iteration: int) -> bool:
    return cfg.alpha > 0 and iteration >= cfg.warmup_iterations
