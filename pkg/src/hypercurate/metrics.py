"""Evaluation metrics: multi-label F1, mean IoU, normalized regression MSE.

Conventions, chosen once and mirrored by the brute-force reference
implementations used in tests:

- per-class F1 uses 2TP / (2TP + FP + FN); a class absent from both
  predictions and targets is excluded from macro averaging, any class
  touched by either side contributes (zero denominators score 0).
- mIoU pools the confusion over the whole batch, ignores pixels whose
  target is 255, and averages over classes present in targets or
  predictions.
- normalized MSE divides each parameter's MSE by the MSE of a constant
  baseline predictor (training-set means supplied by the caller,
  never recomputed on the evaluation data); reported both as the plain
  sum of ratios and as a percentage mean of ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

IGNORE_INDEX = 255


@dataclass(frozen=True)
class MultiLabelBatch:
    """Boolean indicator matrices, one row per sample, one column per class."""

    predictions: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        p, t = np.asarray(self.predictions), np.asarray(self.targets)
        if p.shape != t.shape:
            raise ValidationError(f"shape mismatch {p.shape} vs {t.shape}")
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError(f"expected [N, K] with N, K >= 1, got {p.shape}")
        object.__setattr__(self, "predictions", p.astype(bool))
        object.__setattr__(self, "targets", t.astype(bool))


@dataclass(frozen=True)
class MaskBatch:
    """Integer class-index mask stacks with 255 as the ignore value."""

    predictions: np.ndarray
    targets: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        p = np.asarray(self.predictions)
        t = np.asarray(self.targets)
        if p.shape != t.shape:
            raise ValidationError(f"shape mismatch {p.shape} vs {t.shape}")
        if p.ndim != 3 or p.shape[0] < 1:
            raise ValidationError(f"expected [N, H, W], got {p.shape}")
        if not (1 <= self.n_classes <= IGNORE_INDEX):
            raise ValidationError(f"n_classes {self.n_classes} outside [1, 255]")
        p = p.astype(np.int64)
        t = t.astype(np.int64)
        if p.min() < 0 or p.max() >= self.n_classes:
            raise ValidationError(
                f"prediction class index outside [0, {self.n_classes})"
            )
        valid_t = (t >= 0) & ((t < self.n_classes) | (t == IGNORE_INDEX))
        if not bool(valid_t.all()):
            raise ValidationError(
                f"target class index outside [0, {self.n_classes}) + ignore"
            )
        object.__setattr__(self, "predictions", p)
        object.__setattr__(self, "targets", t)


@dataclass(frozen=True)
class RegressionBatch:
    """Real-valued predictions/targets plus training-set mean baselines."""

    predictions: np.ndarray
    targets: np.ndarray
    baseline_means: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.predictions, dtype=float)
        t = np.asarray(self.targets, dtype=float)
        b = np.asarray(self.baseline_means, dtype=float)
        if p.shape != t.shape:
            raise ValidationError(f"shape mismatch {p.shape} vs {t.shape}")
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError(f"expected [N, P] with N, P >= 1, got {p.shape}")
        if b.shape != (p.shape[1],):
            raise ValidationError(
                f"baseline_means shape {b.shape} != ({p.shape[1]},)"
            )
        if not bool(np.isfinite(p).all() and np.isfinite(t).all() and np.isfinite(b).all()):
            raise ValidationError("non-finite values in regression batch")
        object.__setattr__(self, "predictions", p)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "baseline_means", b)


@dataclass(frozen=True)
class F1Report:
    score: float
    mode: str
    per_class: tuple[float | None, ...]

    def to_json(self) -> dict:
        return {
            "metric": "f1_multilabel",
            "mode": self.mode,
            "score": self.score,
            "per_class": list(self.per_class),
        }


@dataclass(frozen=True)
class MiouReport:
    score: float
    per_class: tuple[float | None, ...]

    def to_json(self) -> dict:
        return {
            "metric": "miou",
            "score": self.score,
            "per_class": list(self.per_class),
        }


@dataclass(frozen=True)
class NormalizedMseReport:
    sum_form: float
    mean_percent: float
    per_parameter: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "metric": "normalized_mse",
            "sum_form": self.sum_form,
            "mean_percent": self.mean_percent,
            "per_parameter": list(self.per_parameter),
        }


def f1_multilabel(batch: MultiLabelBatch, mode: str = "macro") -> F1Report:
    if mode not in ("micro", "macro"):
        raise ValidationError(f"mode must be micro or macro, got {mode!r}")
    p, t = batch.predictions, batch.targets
    tp = (p & t).sum(axis=0).astype(np.int64)
    fp = (p & ~t).sum(axis=0).astype(np.int64)
    fn = (~p & t).sum(axis=0).astype(np.int64)
    touched = (tp + fp + fn) > 0
    denom = 2 * tp + fp + fn
    with np.errstate(divide="ignore", invalid="ignore"):
        per_class = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)
    table = tuple(
        float(per_class[k]) if touched[k] else None for k in range(p.shape[1])
    )
    if mode == "micro":
        micro_denom = int(denom.sum())
        score = 2 * int(tp.sum()) / micro_denom if micro_denom > 0 else 0.0
    else:
        score = float(per_class[touched].mean()) if bool(touched.any()) else 0.0
    return F1Report(float(score), mode, table)


def miou(batch: MaskBatch) -> MiouReport:
    k = batch.n_classes
    t = batch.targets.reshape(-1)
    p = batch.predictions.reshape(-1)
    keep = t != IGNORE_INDEX
    t = t[keep]
    p = p[keep]
    confusion = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    tp = np.diag(confusion).astype(np.int64)
    in_target = confusion.sum(axis=1).astype(np.int64)
    in_pred = confusion.sum(axis=0).astype(np.int64)
    union = in_target + in_pred - tp
    present = union > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(present, tp / np.where(present, union, 1), 0.0)
    table = tuple(float(iou[c]) if present[c] else None for c in range(k))
    score = float(iou[present].mean()) if bool(present.any()) else 0.0
    return MiouReport(score, table)


def normalized_mse(batch: RegressionBatch) -> NormalizedMseReport:
    diff = batch.predictions - batch.targets
    mse = (diff * diff).mean(axis=0)
    base_diff = batch.baseline_means[None, :] - batch.targets
    base = (base_diff * base_diff).mean(axis=0)
    if bool((base <= 0).any()):
        bad = [int(i) for i in np.nonzero(base <= 0)[0]]
        raise ValidationError(
            f"baseline MSE is zero for parameter(s) {bad}; "
            "targets equal the baseline mean (zero variance)"
        )
    ratios = mse / base
    total = float(ratios.sum())
    return NormalizedMseReport(
        sum_form=total,
        mean_percent=100.0 * total / batch.predictions.shape[1],
        per_parameter=tuple(float(r) for r in ratios),
    )
