"""COCO-style AP / AR for quadrant, enumeration and disease labels.

Conventions follow pycocotools: detections are capped at
``max_detections`` per image and class after sorting by score, matched
greedily in score order to the unmatched same-class ground truth with the
highest IoU at or above the threshold, and precision is interpolated at
101 evenly spaced recall points. Classes without ground truth are left
out of the averages and reported separately. Crowd regions are not
supported.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .annotations import AnnotationSet, HierarchyLevel, IndexBase, ToothId, to_global
from .errors import ConfigError, IntegrityError, ParseError, RangeError
from .geometry import BBox, iou

__all__ = [
    "LABEL_TYPES",
    "EvalConfig",
    "GroundTruth",
    "Prediction",
    "EvalReport",
    "match_detections",
    "average_precision",
    "ground_truth_from",
    "predictions_from_submission",
    "evaluate",
]

LABEL_TYPES = ("quadrant", "enumeration", "disease")


def _default_thresholds() -> tuple[float, ...]:
    return tuple(float(t) for t in np.round(np.linspace(0.5, 0.95, 10), 2))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = field(default_factory=_default_thresholds)
    recall_points: int = 101
    max_detections: int = 100
    label_type: str = "disease"

    def __post_init__(self) -> None:
        ts = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", ts)
        if not ts or any(not 0.0 < t <= 1.0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError(f"IoU thresholds must be strictly increasing in (0, 1], got {ts}")
        if self.recall_points < 2:
            raise ConfigError(f"recall_points must be >= 2, got {self.recall_points}")
        if self.max_detections < 1:
            raise ConfigError(f"max_detections must be >= 1, got {self.max_detections}")
        if self.label_type not in LABEL_TYPES:
            raise ConfigError(f"label_type must be one of {LABEL_TYPES}, got {self.label_type!r}")

    def with_label_type(self, label_type: str) -> "EvalConfig":
        return EvalConfig(self.iou_thresholds, self.recall_points, self.max_detections, label_type)


@dataclass(frozen=True)
class GroundTruth:
    image_id: int
    cls: int
    bbox: BBox


@dataclass(frozen=True)
class Prediction:
    image_id: int
    cls: int
    bbox: BBox
    score: float


def _ranked(preds: Sequence[Prediction]) -> list[Prediction]:
    return sorted(preds, key=lambda p: -p.score)  # stable: ties keep input order


def match_detections(
    gt: Sequence[GroundTruth], preds: Sequence[Prediction], iou_thr: float
) -> list[tuple[Prediction, GroundTruth | None]]:
    """Greedy COCO matching within one image, returned in score order.

    On equal IoU the earlier ground truth wins.
    """
    used = [False] * len(gt)
    out: list[tuple[Prediction, GroundTruth | None]] = []
    for p in _ranked(preds):
        best, best_iou = -1, iou_thr
        for k, g in enumerate(gt):
            if used[k] or g.cls != p.cls:
                continue
            o = iou(p.bbox, g.bbox)
            if o >= best_iou and (best < 0 or o > best_iou):
                best, best_iou = k, o
        if best >= 0:
            used[best] = True
            out.append((p, gt[best]))
        else:
            out.append((p, None))
    return out


def average_precision(
    matches: Sequence[tuple[float, bool]], n_gt: int, recall_points: int = 101
) -> float | None:
    """Interpolated AP from ``(score, is_true_positive)`` pairs pooled over a dataset.

    Returns ``None`` when the class has no ground truth.
    """
    if n_gt == 0:
        return None
    if not matches:
        return 0.0
    order = sorted(range(len(matches)), key=lambda i: -matches[i][0])
    tp_flags = np.array([matches[i][1] for i in order], dtype=bool)
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    rs = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, rs, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


@dataclass
class EvalReport:
    label_type: str
    ap: float
    ap50: float
    ap75: float
    ar: float
    per_class: dict[int, dict[str, Any]]
    absent_classes: list[int]
    counts: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "label_type": self.label_type,
            "AP": self.ap,
            "AP50": self.ap50,
            "AP75": self.ap75,
            "AR": self.ar,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "absent_classes": self.absent_classes,
            "counts": self.counts,
        }

    def per_class_table(self, delimiter: str = ",") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["class", "n_gt", "n_pred", "AP", "AP50", "AP75", "AR"])
        for cls, row in sorted(self.per_class.items()):
            writer.writerow([cls, row["n_gt"], row["n_pred"]]
                            + ["" if row[k] is None else f"{row[k]:.6f}" for k in ("AP", "AP50", "AP75", "AR")])
        return buf.getvalue()


def ground_truth_from(aset: AnnotationSet, label_type: str) -> list[GroundTruth]:
    need = {"quadrant": HierarchyLevel.QUADRANT, "enumeration": HierarchyLevel.ENUMERATION,
            "disease": HierarchyLevel.DISEASE}[label_type]
    if aset.hierarchy_level < need:
        raise ConfigError(f"{label_type} evaluation needs {need.name.lower()}-level ground truth, "
                          f"got {aset.hierarchy_level.name.lower()}")
    out = []
    for ob in aset.objects:
        if label_type == "quadrant":
            cls = ob.quadrant
        elif label_type == "enumeration":
            cls = to_global(ob.tooth)
        else:
            cls = ob.disease
        out.append(GroundTruth(ob.image_id, cls, ob.bbox))
    return out


def predictions_from_submission(
    records: Iterable[Mapping[str, Any]],
    label_type: str,
    index_base: IndexBase | str = IndexBase.ONE,
) -> list[Prediction]:
    """Read COCO-results records carrying ``category_id_1/2/3``.

    Records lacking the field the label type needs (unmatched findings) are
    skipped.
    """
    off = IndexBase.coerce(index_base).offset
    out = []
    for i, rec in enumerate(records):
        where = f"$[{i}]"
        try:
            image_id = int(rec["image_id"])
            box = BBox.from_xywh(rec["bbox"])
            score = float(rec["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad submission record: {exc}", where) from None
        if not math.isfinite(score):
            raise ParseError("non-finite score", where)
        q, e, d = rec.get("category_id_1"), rec.get("category_id_2"), rec.get("category_id_3")
        if label_type == "quadrant":
            if q is None:
                continue
            cls = int(q) + off
            if not 1 <= cls <= 4:
                raise RangeError(f"{where}: quadrant {q} out of range")
        elif label_type == "enumeration":
            if q is None or e is None:
                continue
            cls = to_global(ToothId(int(q) + off, int(e) + off))
        else:
            if d is None:
                continue
            cls = int(d) + off
        out.append(Prediction(image_id, cls, box, score))
    return out


def evaluate(
    gt: AnnotationSet,
    findings: Sequence[Mapping[str, Any]] | Sequence[Prediction],
    config: EvalConfig | None = None,
    index_base: IndexBase | str = IndexBase.ONE,
) -> EvalReport:
    """Score a submission against ground truth for ``config.label_type``."""
    config = config or EvalConfig()
    gts = ground_truth_from(gt, config.label_type)
    if findings and isinstance(findings[0], Prediction):
        preds = list(findings)
    else:
        preds = predictions_from_submission(findings, config.label_type, index_base)

    known = {im.id for im in gt.images}
    offenders = sorted({p.image_id for p in preds} - known)
    if offenders:
        raise IntegrityError(f"submission references unknown image ids: {offenders}")

    gt_by: dict[tuple[int, int], list[GroundTruth]] = {}
    for g in gts:
        gt_by.setdefault((g.image_id, g.cls), []).append(g)
    pred_by: dict[tuple[int, int], list[Prediction]] = {}
    for p in preds:
        pred_by.setdefault((p.image_id, p.cls), []).append(p)

    gt_classes = sorted({g.cls for g in gts})
    absent = sorted({p.cls for p in preds} - set(gt_classes))
    image_order = [im.id for im in gt.images]
    thresholds = config.iou_thresholds

    ap_grid = np.zeros((len(thresholds), len(gt_classes)))
    ar_grid = np.zeros_like(ap_grid)
    per_class: dict[int, dict[str, Any]] = {}
    tp50 = 0
    for c, cls in enumerate(gt_classes):
        n_gt = sum(len(gt_by.get((im, cls), [])) for im in image_order)
        n_pred = 0
        for t, thr in enumerate(thresholds):
            pooled: list[tuple[float, bool]] = []
            for im in image_order:
                kept = _ranked(pred_by.get((im, cls), []))[: config.max_detections]
                if t == 0:
                    n_pred += len(kept)
                pooled.extend((p.score, g is not None)
                              for p, g in match_detections(gt_by.get((im, cls), []), kept, thr))
            ap_grid[t, c] = average_precision(pooled, n_gt, config.recall_points)
            n_tp = sum(1 for _, hit in pooled if hit)
            ar_grid[t, c] = n_tp / n_gt
            if math.isclose(thr, 0.5):
                tp50 += n_tp
        per_class[cls] = {
            "n_gt": n_gt,
            "n_pred": n_pred,
            "AP": float(ap_grid[:, c].mean()),
            "AP50": _at(ap_grid[:, c], thresholds, 0.5),
            "AP75": _at(ap_grid[:, c], thresholds, 0.75),
            "AR": float(ar_grid[:, c].mean()),
        }
    for cls in absent:
        per_class[cls] = {"n_gt": 0, "n_pred": sum(1 for p in preds if p.cls == cls),
                          "AP": None, "AP50": None, "AP75": None, "AR": None}

    if gt_classes:
        ap = float(ap_grid.mean())
        ar = float(ar_grid.mean())
        ap50 = _at(ap_grid.mean(axis=1), thresholds, 0.5)
        ap75 = _at(ap_grid.mean(axis=1), thresholds, 0.75)
    else:
        ap = ar = ap50 = ap75 = math.nan
    return EvalReport(
        label_type=config.label_type,
        ap=ap, ap50=ap50, ap75=ap75, ar=ar,
        per_class=per_class,
        absent_classes=absent,
        counts={"images": len(image_order), "ground_truths": len(gts), "predictions": len(preds),
                "true_positives_at_50": tp50},
    )


def _at(values: np.ndarray, thresholds: Sequence[float], target: float) -> float:
    for v, t in zip(values, thresholds):
        if math.isclose(t, target):
            return float(v)
    return math.nan
