"""Model evaluation glue: run inference over records and compute the metric suite."""

from __future__ import annotations

import numpy as np
import torch

from .datagen import Dataset, SceneRecord
from .detector import DTYPE
from .inference import InferConfig, detect_relationships, triplet_class_strings
from .language import Triplet
from .metrics import (
    DetGroundTruth,
    DetPrediction,
    EvalConfig,
    RelGroundTruth,
    RelPrediction,
    detection_map,
    mean_recall_at_k,
    relationship_map,
)


def relation_ground_truth(record: SceneRecord) -> list[RelGroundTruth]:
    out = []
    for rel in record.relations:
        sub = record.instances[rel.subject]
        obj = record.instances[rel.object]
        for pred in rel.predicates:
            out.append(RelGroundTruth(sub.box, obj.box, (sub.labels[0], pred, obj.labels[0])))
    return out


def detection_ground_truth(record: SceneRecord) -> list[DetGroundTruth]:
    return [DetGroundTruth(inst.box, inst.labels[0]) for inst in record.instances]


def predict_relations(
    model, record: SceneRecord, triplet_classes: list[Triplet], infer_cfg: InferConfig
) -> list[RelPrediction]:
    triplets = detect_relationships(model, record, triplet_classes, infer_cfg)
    return [
        RelPrediction(t.subject_box, t.object_box, triplet_classes[t.class_index], t.score)
        for t in triplets
    ]


def predict_detections(
    model, record: SceneRecord, object_labels: list[str], infer_cfg: InferConfig
) -> list[DetPrediction]:
    """Every token scores every object class; scores are sigmoid of the query logits."""
    template_indices = [infer_cfg.object_template_index] * len(object_labels)
    queries = model.object_queries(object_labels, template_indices)
    image = torch.from_numpy(record.image).to(DTYPE)
    with torch.no_grad():
        out = model.detector(image, queries)
        scores = torch.sigmoid(out.class_logits).cpu().numpy()
    boxes = out.box_list()
    return [
        DetPrediction(boxes[i], object_labels[c], float(scores[i, c]))
        for i in range(len(boxes))
        for c in range(len(object_labels))
    ]


def evaluate_model(
    model,
    records: list[SceneRecord],
    eval_cfg: EvalConfig = EvalConfig(),
    infer_cfg: InferConfig = InferConfig(),
    triplet_classes: list[Triplet] | None = None,
    object_labels: list[str] | None = None,
    training_counts: dict[Triplet, int] | None = None,
) -> dict:
    """Full metric suite over `records`; returns the metrics-JSON dictionary.

    Relationship queries default to the checkpointed label space's triplet
    classes, detection queries to its object labels.
    """
    if triplet_classes is None:
        if model.label_space is None:
            raise ValueError("no triplet classes given and model has no label space")
        triplet_classes = list(model.label_space.relation_triplets)
    if object_labels is None:
        if model.label_space is None:
            raise ValueError("no object labels given and model has no label space")
        object_labels = list(model.label_space.object_labels)
    triplet_class_strings(triplet_classes)  # reject colliding class renderings early
    rel_preds = [predict_relations(model, rec, triplet_classes, infer_cfg) for rec in records]
    rel_gts = [relation_ground_truth(rec) for rec in records]
    det_preds = [predict_detections(model, rec, object_labels, infer_cfg) for rec in records]
    det_gts = [detection_ground_truth(rec) for rec in records]
    return compute_metrics(rel_preds, rel_gts, det_preds, det_gts, eval_cfg, training_counts)


def compute_metrics(
    rel_preds: list[list[RelPrediction]],
    rel_gts: list[list[RelGroundTruth]],
    det_preds: list[list[DetPrediction]] | None,
    det_gts: list[list[DetGroundTruth]] | None,
    eval_cfg: EvalConfig = EvalConfig(),
    training_counts: dict[Triplet, int] | None = None,
) -> dict:
    splits, _ = relationship_map(rel_preds, rel_gts, eval_cfg, training_counts)
    mr = {
        str(k): mean_recall_at_k(rel_preds, rel_gts, k, eval_cfg) for k in sorted(eval_cfg.recall_ks)
    }
    if det_preds is not None and det_gts is not None:
        det_mAP, _ = detection_map(det_preds, det_gts, eval_cfg)
    else:
        det_mAP = 0.0
    return {
        "map_full": splits["full"],
        "map_rare": splits["rare"],
        "map_nonrare": splits["nonrare"],
        "mr_at": mr,
        "detection_map": det_mAP,
    }


def dataset_eval(model, dataset: Dataset, **kwargs) -> dict:
    return evaluate_model(model, dataset.records, **kwargs)


def metrics_to_json(metrics: dict) -> str:
    import json

    return json.dumps(metrics, sort_keys=True, indent=1) + "\n"
