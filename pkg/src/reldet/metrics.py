"""Evaluation: detection mAP, relationship mAP (Full/Rare/Non-Rare), mean Recall@K.

A relationship prediction counts as a true positive when its subject and
object boxes both reach the IoU threshold against an unmatched ground truth
of the exact same (subject, predicate, object) class; matching is greedy in
descending score with each ground truth claimed at most once.  AP uses
all-point interpolation, and the Rare split holds the classes with fewer
training instances than the cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Box, iou
from .language import Triplet


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    recall_ks: tuple[int, ...] = (50, 100)
    rare_cutoff: int = 10

    def __post_init__(self):
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError("iou threshold must be in (0, 1]")
        if any(k < 1 for k in self.recall_ks):
            raise ValueError("recall K values must be >= 1")


@dataclass(frozen=True)
class RelPrediction:
    subject_box: Box
    object_box: Box
    triplet: Triplet
    score: float


@dataclass(frozen=True)
class RelGroundTruth:
    subject_box: Box
    object_box: Box
    triplet: Triplet


@dataclass(frozen=True)
class DetPrediction:
    box: Box
    label: str
    score: float


@dataclass(frozen=True)
class DetGroundTruth:
    box: Box
    label: str


def average_precision(scores: np.ndarray, tp: np.ndarray, num_gt: int) -> float:
    """All-point interpolated AP from parallel score / true-positive arrays."""
    if num_gt == 0:
        return 0.0
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = tp[order].astype(np.float64)
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / num_gt
    precision = cum_tp / (cum_tp + cum_fp)
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _pair_quality(pred, gt, thr: float) -> float:
    """min(subject IoU, object IoU) when both reach the threshold, else -1."""
    si = iou(pred.subject_box, gt.subject_box)
    if si < thr:
        return -1.0
    oi = iou(pred.object_box, gt.object_box)
    if oi < thr:
        return -1.0
    return min(si, oi)


def _greedy_match_class(
    preds: list[tuple[int, int, RelPrediction]],
    gts_by_image: dict[int, list[RelGroundTruth]],
    thr: float,
) -> tuple[np.ndarray, np.ndarray, dict[tuple[int, int], bool]]:
    """Match one class's predictions (image, order, pred) against its ground truth.

    Returns (scores, tp flags, matched-gt map keyed by (image, gt index)).
    """
    preds = sorted(preds, key=lambda item: (-item[2].score, item[0], item[1]))
    matched: dict[tuple[int, int], bool] = {}
    scores = np.empty(len(preds))
    tp = np.zeros(len(preds), dtype=bool)
    for row, (img, _, pred) in enumerate(preds):
        scores[row] = pred.score
        best_q, best_g = -1.0, -1
        for g, gt in enumerate(gts_by_image.get(img, [])):
            if matched.get((img, g)):
                continue
            q = _pair_quality(pred, gt, thr)
            if q > best_q:
                best_q, best_g = q, g
        if best_g >= 0:
            matched[(img, best_g)] = True
            tp[row] = True
    return scores, tp, matched


def relationship_map(
    predictions: list[list[RelPrediction]],
    ground_truth: list[list[RelGroundTruth]],
    config: EvalConfig = EvalConfig(),
    training_counts: dict[Triplet, int] | None = None,
    splits: dict[str, set[Triplet]] | None = None,
) -> tuple[dict[str, float], dict[Triplet, float]]:
    """Per-split relationship mAP plus the per-class AP table.

    Classes are the triplet classes with at least one ground truth.  When
    `splits` is omitted, Rare/Non-Rare are derived from `training_counts`
    against the configured cutoff (absent classes count as zero).
    """
    classes = sorted({gt.triplet for per_image in ground_truth for gt in per_image})
    class_set = set(classes)
    per_class: dict[Triplet, float] = {}
    for cls in classes:
        cls_preds = [
            (img, order, p)
            for img, per_image in enumerate(predictions)
            for order, p in enumerate(per_image)
            if p.triplet == cls
        ]
        gts_by_image = {
            img: [g for g in per_image if g.triplet == cls]
            for img, per_image in enumerate(ground_truth)
        }
        num_gt = sum(len(v) for v in gts_by_image.values())
        scores, tp, _ = _greedy_match_class(cls_preds, gts_by_image, config.iou_threshold)
        per_class[cls] = average_precision(scores, tp, num_gt)
    if splits is None:
        counts = training_counts or {}
        rare = {c for c in classes if counts.get(c, 0) < config.rare_cutoff}
        splits = {"full": class_set, "rare": rare, "nonrare": class_set - rare}
    else:
        for name, members in splits.items():
            unknown = members - class_set
            if unknown:
                raise ValueError(f"split {name!r} references unknown classes: {sorted(unknown)[:3]}")
        splits = {"full": class_set, **splits}
    result = {}
    for name, members in splits.items():
        values = [per_class[c] for c in classes if c in members]
        result[name] = float(np.mean(values)) if values else 0.0
    return result, per_class


def mean_recall_at_k(
    predictions: list[list[RelPrediction]],
    ground_truth: list[list[RelGroundTruth]],
    k: int,
    config: EvalConfig = EvalConfig(),
) -> float:
    """Mean over predicate classes of recall within each image's top-K predictions."""
    matched_by_pred: dict[str, int] = {}
    total_by_pred: dict[str, int] = {}
    for per_image in ground_truth:
        for gt in per_image:
            total_by_pred[gt.triplet[1]] = total_by_pred.get(gt.triplet[1], 0) + 1
    for img, (per_image_preds, per_image_gts) in enumerate(zip(predictions, ground_truth)):
        top = sorted(
            enumerate(per_image_preds), key=lambda item: (-item[1].score, item[0])
        )[:k]
        by_class: dict[Triplet, list[tuple[int, int, RelPrediction]]] = {}
        for order, pred in top:
            by_class.setdefault(pred.triplet, []).append((img, order, pred))
        for cls, cls_preds in by_class.items():
            gts = [g for g in per_image_gts if g.triplet == cls]
            if not gts:
                continue
            _, _, matched = _greedy_match_class(cls_preds, {img: gts}, config.iou_threshold)
            hits = sum(1 for v in matched.values() if v)
            matched_by_pred[cls[1]] = matched_by_pred.get(cls[1], 0) + hits
    recalls = [
        matched_by_pred.get(pred, 0) / total for pred, total in total_by_pred.items() if total > 0
    ]
    return float(np.mean(recalls)) if recalls else 0.0


def detection_map(
    predictions: list[list[DetPrediction]],
    ground_truth: list[list[DetGroundTruth]],
    config: EvalConfig = EvalConfig(),
) -> tuple[float, dict[str, float]]:
    """Mean AP over object classes with the same greedy matching discipline."""
    classes = sorted({gt.label for per_image in ground_truth for gt in per_image})
    per_class: dict[str, float] = {}
    for cls in classes:
        rows = []
        for img, per_image in enumerate(predictions):
            for order, p in enumerate(per_image):
                if p.label == cls:
                    rows.append((img, order, p))
        rows.sort(key=lambda item: (-item[2].score, item[0], item[1]))
        gts_by_image = {
            img: [g for g in per_image if g.label == cls]
            for img, per_image in enumerate(ground_truth)
        }
        num_gt = sum(len(v) for v in gts_by_image.values())
        matched: set[tuple[int, int]] = set()
        scores = np.empty(len(rows))
        tp = np.zeros(len(rows), dtype=bool)
        for row, (img, _, p) in enumerate(rows):
            scores[row] = p.score
            best_iou, best_g = -1.0, -1
            for g, gt in enumerate(gts_by_image.get(img, [])):
                if (img, g) in matched:
                    continue
                value = iou(p.box, gt.box)
                if value >= config.iou_threshold and value > best_iou:
                    best_iou, best_g = value, g
            if best_g >= 0:
                matched.add((img, best_g))
                tp[row] = True
        per_class[cls] = average_precision(scores, tp, num_gt)
    overall = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return overall, per_class
