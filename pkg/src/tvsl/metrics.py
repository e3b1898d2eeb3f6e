"""Localization metrics: IoU/CIoU, success rate, AUC, AP and class-aware AP.

Conventions (recorded in every report under ``conventions``):

* A score ``v`` succeeds at threshold ``t`` when ``v >= t`` and ``v > 0``; a
  prediction with no overlap never counts, so an all-zero run has AUC 0.
* AUC is the trapezoid area of success rate over thresholds 0, 0.05, ..., 1.
* AP ranks predictions by confidence (max heatmap value).  Tied confidences
  form one operating point, so AP does not depend on tie order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

log = logging.getLogger(__name__)

METRICS_VERSION = "1"
AUC_THRESHOLDS = np.round(np.arange(21) * 0.05, 10)


def box_mask(box, shape) -> np.ndarray:
    """Boolean mask of a half-open pixel box ``(x0, y0, x1, y1)``."""
    h, w = shape
    x0, y0, x1, y1 = (int(round(v)) for v in box)
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ValueError(f"box {box} is empty or outside a {w}x{h} frame")
    m = np.zeros(shape, dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


def region_mask(region, shape) -> np.ndarray:
    arr = np.asarray(region)
    if arr.shape == tuple(shape):
        if not arr.any():
            raise ValueError("ground-truth region is empty")
        return arr.astype(bool)
    return box_mask(arr, shape)


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"resolution mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 0.0
    return np.count_nonzero(pred & gt) / union


def ciou(masks: np.ndarray, class_indices, gts: dict) -> float:
    """Class-matched IoU averaged over the K predicted maps."""
    scores = []
    for mask, c in zip(masks, class_indices):
        c = int(c)
        if c not in gts:
            log.warning("no ground truth for class %d; scored 0", c)
            scores.append(0.0)
            continue
        scores.append(iou(mask, region_mask(gts[c], mask.shape)))
    return float(np.mean(scores))


def successes(values, threshold: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return (v >= threshold) & (v > 0)


def success_rate_at(values, threshold: float) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0
    return 100.0 * np.count_nonzero(successes(v, threshold)) / v.size


def auc(values, thresholds=AUC_THRESHOLDS) -> float:
    t = np.asarray(thresholds, dtype=float)
    rates = np.array([success_rate_at(values, x) for x in t]) / 100.0
    area = np.sum((rates[1:] + rates[:-1]) * np.diff(t)) / 2.0
    return 100.0 * area / (t[-1] - t[0])


def average_precision(confidences, hits) -> float:
    """Area under the step precision-recall curve, in percent."""
    conf = np.asarray(confidences, dtype=float)
    hits = np.asarray(hits, dtype=bool)
    n_pos = np.count_nonzero(hits)
    if n_pos == 0:
        return 0.0
    order = np.argsort(-conf, kind="stable")
    conf, hits = conf[order], hits[order]
    tp = np.cumsum(hits)
    # last index of each block of equal confidence
    ends = np.flatnonzero(np.r_[conf[1:] != conf[:-1], True])
    tp = tp[ends]
    precision = tp / (ends + 1)
    recall = tp / n_pos
    return 100.0 * float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def class_aware_ap(confidences, hits, classes) -> float:
    classes = np.asarray(classes)
    conf = np.asarray(confidences, dtype=float)
    hits = np.asarray(hits, dtype=bool)
    per_class = [average_precision(conf[classes == c], hits[classes == c])
                 for c in np.unique(classes)]
    return float(np.mean(per_class)) if per_class else 0.0


@dataclass
class MetricsReport:
    mode: str                 # "solo" | "multi"
    threshold: float          # IoU / CIoU success threshold
    policy: str               # binarization policy id
    sample_ids: list
    sample_scores: list       # IoU (solo) or CIoU (multi) per sample
    slot_classes: list        # per (sample, source) slot
    slot_ious: list
    slot_confidences: list
    aggregates: dict
    chance: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    conventions: dict = field(default_factory=lambda: {
        "metrics_version": METRICS_VERSION,
        "success": "v >= t and v > 0",
        "auc_thresholds": "0:0.05:1, trapezoid",
        "ap": "step PR area, ties grouped, confidence = max heatmap value",
    })

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, default=_jsonable)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "score"])
        for sid, s in zip(self.sample_ids, self.sample_scores):
            w.writerow([sid, f"{s:.6f}"])
        for k, v in self.aggregates.items():
            w.writerow([f"aggregate:{k}", f"{v:.6f}"])
        for k, v in self.chance.items():
            w.writerow([f"chance:{k}", f"{v:.6f}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @property
    def headline(self) -> float:
        key = "ciou@{:g}" if self.mode == "multi" else "iou@{:g}"
        return self.aggregates[key.format(self.threshold)]


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def summarize(mode: str, threshold: float, policy: str, sample_ids, sample_scores,
              slot_sample, slot_classes, slot_ious, slot_confidences) -> MetricsReport:
    """Aggregate per-sample and per-slot scores into a report."""
    scores = np.asarray(sample_scores, dtype=float)
    slot_ious = np.asarray(slot_ious, dtype=float)
    hits = successes(slot_ious, threshold)
    if mode == "solo":
        agg = {
            "ap": average_precision(slot_confidences, hits),
            f"iou@{threshold:g}": success_rate_at(scores, threshold),
            "auc": auc(scores),
        }
    else:
        agg = {
            "cap": class_aware_ap(slot_confidences, hits, slot_classes),
            f"ciou@{threshold:g}": success_rate_at(scores, threshold),
            "auc": auc(scores),
        }
    agg["mean_score"] = float(scores.mean()) if scores.size else 0.0
    return MetricsReport(
        mode=mode, threshold=threshold, policy=policy,
        sample_ids=list(sample_ids), sample_scores=scores.tolist(),
        slot_classes=[int(c) for c in slot_classes], slot_ious=slot_ious.tolist(),
        slot_confidences=[float(c) for c in slot_confidences], aggregates=agg,
        extra={"slot_sample": [int(s) for s in slot_sample]},
    )
