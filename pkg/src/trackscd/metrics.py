"""Change-map metrics: per-class IoU, mIoU and binary changed/unchanged F1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .formats import ChangeClass

CLASS_NAMES = [c.name.lower() for c in ChangeClass]


@dataclass
class ConfusionMatrix:
    """Rows are ground-truth classes, columns predicted classes."""

    counts: np.ndarray

    @classmethod
    def zeros(cls, k: int = len(ChangeClass)) -> "ConfusionMatrix":
        return cls(np.zeros((k, k), dtype=np.int64))

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def collapse_binary(self) -> "ConfusionMatrix":
        """Merge every nonzero class into one ``changed`` class."""
        c = self.counts
        return ConfusionMatrix(
            np.array([[c[0, 0], c[0, 1:].sum()], [c[1:, 0].sum(), c[1:, 1:].sum()]], dtype=np.int64)
        )


def confusion(pred: np.ndarray, gt: np.ndarray, k: int = len(ChangeClass)) -> ConfusionMatrix:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    for name, a in (("prediction", pred), ("ground truth", gt)):
        if a.size and (a.min() < 0 or a.max() >= k):
            raise ValueError(f"{name} holds a class code outside 0..{k - 1}")
    idx = gt.astype(np.int64).ravel() * k + pred.astype(np.int64).ravel()
    return ConfusionMatrix(np.bincount(idx, minlength=k * k).reshape(k, k))


def per_class_iou(cm: ConfusionMatrix) -> list[float | None]:
    """IoU per class, ``None`` where neither prediction nor truth has the class."""
    c = cm.counts
    diag = np.diag(c)
    union = c.sum(axis=0) + c.sum(axis=1) - diag
    return [float(d / u) if u else None for d, u in zip(diag, union)]


def miou(cm: ConfusionMatrix, exclude_empty: bool = True) -> tuple[float, list[float | None]]:
    ious = per_class_iou(cm)
    if exclude_empty:
        vals = [v for v in ious if v is not None]
    else:
        vals = [0.0 if v is None else v for v in ious]
    return (float(np.mean(vals)) if vals else 1.0), ious


def f1_binary(cm: ConfusionMatrix) -> float:
    b = cm.collapse_binary().counts if cm.k != 2 else cm.counts
    tp, fp, fn = b[1, 1], b[0, 1], b[1, 0]
    denom = 2 * tp + fp + fn
    # no positives anywhere: the prediction is perfect
    return float(2 * tp / denom) if denom else 1.0


def evaluate(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    binary: bool = False,
    per_frame: bool = False,
    exclude_empty: bool = True,
) -> dict:
    """Report over a set of frames.

    Counts are pooled over all frames unless ``per_frame`` is set, in which
    case the scores are computed per frame and averaged.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground-truth frames")
    if not preds:
        raise ValueError("nothing to evaluate")
    cms = [confusion(p, g) for p, g in zip(preds, gts)]
    if binary:
        cms = [cm.collapse_binary() for cm in cms]
    names = ["unchanged", "changed"] if binary else CLASS_NAMES
    total = sum(cms[1:], cms[0])

    if per_frame:
        frame_scores = [miou(cm, exclude_empty) for cm in cms]
        m = float(np.mean([s[0] for s in frame_scores]))
        f1 = float(np.mean([f1_binary(cm) for cm in cms]))
        ious = []
        for j in range(len(names)):
            vals = [s[1][j] for s in frame_scores if s[1][j] is not None]
            ious.append(float(np.mean(vals)) if vals else None)
    else:
        m, ious = miou(total, exclude_empty)
        f1 = f1_binary(total)
    return {
        "per_class_iou": dict(zip(names, ious)),
        "miou": m,
        "f1": f1,
        "pixel_counts": {
            "total": total.total,
            "gt": dict(zip(names, total.counts.sum(axis=1).tolist())),
            "pred": dict(zip(names, total.counts.sum(axis=0).tolist())),
        },
        "frames": len(preds),
    }


def accumulate(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> ConfusionMatrix:
    cm = ConfusionMatrix.zeros()
    for p, g in pairs:
        cm = cm + confusion(p, g)
    return cm
