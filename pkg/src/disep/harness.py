"""Training loop, evaluation metrics and ablation sweeps.

One training iteration:

    batch -> forward -> CAM -> localization masks -> connectivity search
          -> separation loss (+grad, gated by warmup) -> classification loss
          -> combined backward -> SGD step

Branch losses are computed and logged every iteration, even when the
separation term is switched off (alpha = 0 or still warming up); they only
reach the parameters once the gate opens.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cam import compute_cam, predict_change
from .grid import BinaryMask, FeatureMap, InstanceIdMask
from .localize import ThresholdConfig, changed_localization, masks_from_ground_truth, unchanged_localization
from .model import (ModelConfig, ModelParams, backward_batch, bce_with_logits, forward_batch,
                    init_params, pixel_logits, sgd_step, stack_samples)
from .retrieve import connectivity_search, count_components
from .separate import LossBreakdown, SeparationConfig, separation_active, separation_loss, total_loss
from .synth import SynthConfig, generate_split

log = logging.getLogger(__name__)

CSV_COLUMNS = ["iteration", "l_cls", "l_pc", "l_puc", "l_pu", "l_sep", "total",
               "val_f1", "val_oa", "val_iou", "val_inst_mae"]
SUMMARY_COLUMNS = ["axis", "value", "seeds", "f1", "oa", "iou", "precision", "recall",
                   "inst_mae", "f1_per_seed", "inst_mae_per_seed"]
AXES = ("alpha", "thresholds", "scope")


# --- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        if self.tp + self.fp == 0:
            return 1.0 if self.tp + self.fn == 0 else 0.0
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        if self.tp + self.fn == 0:
            return 1.0 if self.tp + self.fp == 0 else 0.0
        return self.tp / (self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    @property
    def oa(self) -> float:
        return (self.tp + self.tn) / (self.tp + self.fp + self.fn + self.tn)

    @property
    def iou(self) -> float:
        denom = self.tp + self.fp + self.fn
        return 1.0 if denom == 0 else self.tp / denom

    def __add__(self, other: "MetricRow") -> "MetricRow":
        return MetricRow(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def evaluate(pred: BinaryMask, gt: BinaryMask) -> MetricRow:
    if pred.dims != gt.dims:
        raise ValueError(f"prediction {pred.dims} and ground truth {gt.dims} differ")
    p, g = pred.values, gt.values
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return MetricRow(tp, fp, fn, p.size - tp - fp - fn)


def instance_count_error(pred: BinaryMask, gt_instances: InstanceIdMask) -> float:
    """|predicted components - true instances|; a lumping / fragmentation proxy."""
    if pred.dims != gt_instances.dims:
        raise ValueError("prediction and instance mask dimensions differ")
    return float(abs(count_components(pred) - gt_instances.count))


@dataclass
class MetricReport:
    """Split-level scores from pooled confusion counts, plus per-sample rows."""

    rows: list[MetricRow]
    instance_errors: list[float]

    @property
    def pooled(self) -> MetricRow:
        total = MetricRow(0, 0, 0, 0)
        for r in self.rows:
            total = total + r
        return total

    @property
    def f1(self) -> float:
        return self.pooled.f1

    @property
    def oa(self) -> float:
        return self.pooled.oa

    @property
    def iou(self) -> float:
        return self.pooled.iou

    @property
    def precision(self) -> float:
        return self.pooled.precision

    @property
    def recall(self) -> float:
        return self.pooled.recall

    @property
    def instance_count_mae(self) -> float:
        return float(np.mean(self.instance_errors)) if self.instance_errors else 0.0


# --- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 8
    lr: float = 0.05
    eval_every: int = 100
    n_train: int = 512
    n_val: int = 64
    n_test: int = 128
    supervision: str = "weak"  # or "full": pixel BCE with ground-truth masks
    gate_by_logit: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("iterations, batch_size and eval_every must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.supervision not in ("weak", "full"):
            raise ValueError(f"supervision must be 'weak' or 'full', got {self.supervision!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    separation: SeparationConfig = field(default_factory=SeparationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


class TrainingAborted(RuntimeError):
    def __init__(self, iteration: int, reason: str):
        super().__init__(f"training aborted at iteration {iteration}: {reason}")
        self.iteration = iteration


# --- per-sample pipeline -----------------------------------------------------

def sample_masks(features: np.ndarray, params: ModelParams, sample, exp: ExperimentConfig):
    """Instance id mask and background mask that feed the separation loss."""
    if exp.train.supervision == "full":
        changed, unchanged = masks_from_ground_truth(sample.gt)
    else:
        score = compute_cam(FeatureMap(features), params.cls_w)
        changed = changed_localization(score, exp.thresholds)
        unchanged = unchanged_localization(score, exp.thresholds)
    id_mask, _ = connectivity_search(changed)
    return id_mask, unchanged


def predict_masks(params: ModelParams, samples, exp: ExperimentConfig, batch: int = 16) -> list[BinaryMask]:
    preds = []
    for start in range(0, len(samples), batch):
        chunk = samples[start:start + batch]
        cache = forward_batch(params, *stack_samples(chunk))
        for b in range(len(chunk)):
            if exp.train.supervision == "full":
                preds.append(BinaryMask(pixel_logits(params, cache.features[b]) >= 0.0))
                continue
            if exp.train.gate_by_logit and cache.logits[b] < 0.0:
                preds.append(BinaryMask.zeros(chunk[b].gt.dims))
                continue
            score = compute_cam(FeatureMap(cache.features[b]), params.cls_w)
            preds.append(predict_change(score, exp.thresholds.cam_score))
    return preds


def evaluate_split(params: ModelParams, samples, exp: ExperimentConfig) -> MetricReport:
    preds = predict_masks(params, samples, exp)
    rows = [evaluate(p, s.gt) for p, s in zip(preds, samples)]
    errs = [instance_count_error(p, s.gt_instances) for p, s in zip(preds, samples)]
    return MetricReport(rows, errs)


# --- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    log_rows: list[dict]
    val: MetricReport
    test: MetricReport

    def csv_text(self) -> str:
        return format_csv(self.log_rows, CSV_COLUMNS)


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _prior_log_odds(samples, eps: float = 1e-6) -> float:
    """Log-odds of the changed-pixel rate; the starting pixel-classifier bias.

    Starting from 0 (p = 0.5) on ~5% positive pixels, the first updates push
    every pixel negative hard enough to kill most encoder ReLUs on some seeds,
    leaving the model stuck at the all-unchanged prior.
    """
    p = float(np.mean([s.gt.values.mean() for s in samples]))
    p = min(max(p, eps), 1 - eps)
    return math.log(p / (1 - p))


def train(exp: ExperimentConfig, data=None, use_separation: bool = True,
          params: ModelParams | None = None) -> TrainResult:
    """Fixed-length SGD run; fully determined by ``exp`` (and ``data`` if given).

    ``use_separation=False`` never calls the separation module at all; with
    alpha = 0 the parameter trajectory is identical either way.
    """
    tc, sep = exp.train, exp.separation
    if data is None:
        data = generate_split(exp.synth, tc.n_train, tc.n_val, tc.n_test)
    train_set, val_set, test_set = data
    init_seq, order_seq = np.random.SeedSequence(tc.seed).spawn(2)
    if params is None:
        params = init_params(exp.model, np.random.default_rng(init_seq))
        if tc.supervision == "full":
            params.cls_b = np.asarray(_prior_log_odds(train_set))
    order_rng = np.random.default_rng(order_seq)

    rows = []
    perm, pos = order_rng.permutation(len(train_set)), 0
    for it in range(tc.iterations):
        idx = []
        while len(idx) < tc.batch_size:
            if pos == len(perm):
                perm, pos = order_rng.permutation(len(train_set)), 0
            take = perm[pos:pos + tc.batch_size - len(idx)]
            idx.extend(take.tolist())
            pos += len(take)
        batch = [train_set[i] for i in idx]
        nb = len(batch)
        cache = forward_batch(params, *stack_samples(batch))

        if tc.supervision == "full":
            targets = np.stack([s.gt.values for s in batch]).astype(np.float64)
            pix = pixel_logits(params, cache.features)
            losses, dpix = bce_with_logits(pix, targets)
            l_cls_each = losses.mean(axis=(1, 2))
            dpix = dpix / (nb * pix[0].size)
            dlogits = np.zeros(nb)
        else:
            y = np.array([s.y_cls for s in batch], dtype=np.float64)
            losses, dl = bce_with_logits(cache.logits, y)
            l_cls_each = losses
            dlogits = dl / nb
            dpix = None

        active = use_separation and separation_active(sep, it)
        parts = np.zeros((nb, 3))
        dfeat = np.zeros_like(cache.features) if active else None
        if use_separation:
            for b, s in enumerate(batch):
                f = FeatureMap(cache.features[b]) if np.all(np.isfinite(cache.features[b])) else None
                if f is None:
                    raise TrainingAborted(it, "non-finite features")
                if s.y_cls == 1:
                    id_mask, m_uc = sample_masks(cache.features[b], params, s, exp)
                    br = separation_loss(f, 1, sep, id_mask, m_uc)
                else:
                    br = separation_loss(f, 0, sep)
                parts[b] = (br.l_pc, br.l_puc, br.l_pu)
                if active:
                    dfeat[b] = sep.alpha * br.grad / nb

        l_cls = float(l_cls_each.mean())
        l_pc, l_puc, l_pu = (float(v) for v in parts.mean(axis=0))
        l_sep = l_pc + l_puc + l_pu
        total = total_loss(l_cls, LossBreakdown(l_pc, l_puc, l_pu, None), sep, it) if active else l_cls
        if not all(math.isfinite(v) for v in (l_cls, l_sep, total)):
            raise TrainingAborted(it, "non-finite loss")

        grads = backward_batch(params, cache, dlogits, dfeat, dpix)
        try:
            params = sgd_step(params, grads, tc.lr)
        except FloatingPointError as exc:
            raise TrainingAborted(it, str(exc)) from exc

        row = {"iteration": it, "l_cls": l_cls, "l_pc": l_pc, "l_puc": l_puc, "l_pu": l_pu,
               "l_sep": l_sep, "total": total}
        if (it + 1) % tc.eval_every == 0 or it == tc.iterations - 1:
            rep = evaluate_split(params, val_set, exp)
            row.update(val_f1=rep.f1, val_oa=rep.oa, val_iou=rep.iou, val_inst_mae=rep.instance_count_mae)
            log.info("iter %d  l_cls %.4f  l_sep %.4f  val F1 %.4f  inst MAE %.3f",
                     it, l_cls, l_sep, rep.f1, rep.instance_count_mae)
        rows.append(row)

    return TrainResult(params, rows, evaluate_split(params, val_set, exp), evaluate_split(params, test_set, exp))


# --- ablations -----------------------------------------------------------------

def apply_axis(exp: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "alpha":
        return replace(exp, separation=replace(exp.separation, alpha=float(value)))
    if axis == "scope":
        return replace(exp, separation=replace(exp.separation, scope=str(value)))
    if axis == "thresholds":
        t_high, t_low = value
        return replace(exp, thresholds=replace(exp.thresholds, t_high=float(t_high), t_low=float(t_low)))
    raise ValueError(f"unknown axis {axis!r}; valid axes: {', '.join(AXES)}")


def parse_axis_value(axis: str, text: str):
    if axis == "alpha":
        return float(text)
    if axis == "scope":
        return text
    if axis == "thresholds":
        hi, lo = text.split(":")
        return (float(hi), float(lo))
    raise ValueError(f"unknown axis {axis!r}; valid axes: {', '.join(AXES)}")


def format_axis_value(axis: str, value) -> str:
    if axis == "thresholds":
        return f"{value[0]}:{value[1]}"
    return str(value)


@dataclass(frozen=True)
class RunSummary:
    f1: float
    oa: float
    iou: float
    precision: float
    recall: float
    inst_mae: float


def run_summary(exp: ExperimentConfig) -> RunSummary:
    res = train(exp)
    t = res.test
    return RunSummary(t.f1, t.oa, t.iou, t.precision, t.recall, t.instance_count_mae)


def run_many(configs: list[ExperimentConfig], workers: int = 1) -> list[RunSummary]:
    if workers <= 1 or len(configs) <= 1:
        return [run_summary(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_summary, configs))


def ablation_sweep(base: ExperimentConfig, axis: str, values, seeds=(0,), workers: int = 1) -> list[dict]:
    """One summary row per value, averaged over the shared ``seeds``."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; valid axes: {', '.join(AXES)}")
    values = list(values)
    if not values:
        raise ValueError("ablation needs at least one value")
    configs = [replace(apply_axis(base, axis, v), train=replace(base.train, seed=s))
               for v in values for s in seeds]
    results = run_many(configs, workers)
    rows = []
    for i, v in enumerate(values):
        runs = results[i * len(seeds):(i + 1) * len(seeds)]
        mean = lambda attr: float(np.mean([getattr(r, attr) for r in runs]))
        rows.append({
            "axis": axis, "value": format_axis_value(axis, v), "seeds": " ".join(map(str, seeds)),
            "f1": mean("f1"), "oa": mean("oa"), "iou": mean("iou"), "precision": mean("precision"),
            "recall": mean("recall"), "inst_mae": mean("inst_mae"),
            "f1_per_seed": " ".join(repr(r.f1) for r in runs),
            "inst_mae_per_seed": " ".join(repr(r.inst_mae) for r in runs),
        })
    return rows
