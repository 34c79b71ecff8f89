"""Inference assembly: triplet construction, per-class PNMS, and image-conditioned retrieval."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .boxes import Box, iou
from .datagen import SceneRecord
from .decoder import RelationOutput, select_indices
from .detector import DTYPE, DetectorOutput
from .language import Triplet, prompt_relation


@dataclass(frozen=True)
class InferConfig:
    top_k: int = 100
    pnms_threshold: float = 0.7
    per_class: bool = True
    object_template_index: int = 0

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if not (0.0 < self.pnms_threshold <= 1.0):
            raise ValueError("pnms threshold must be in (0, 1]")


@dataclass(frozen=True)
class ScoredTriplet:
    """A candidate relationship: subject/object boxes, class index, cosine score."""

    subject_box: Box
    object_box: Box
    relation_embedding: np.ndarray
    class_index: int
    score: float
    query_index: int


def assemble(
    det: DetectorOutput, rel: RelationOutput, num_classes: int, top_k: int = 100
) -> list[ScoredTriplet]:
    """Top-K scored triplets over all (relation query, relationship class) pairs.

    Box indices come from the cosine argmax of the role projections against
    the instance embeddings; the score for class k is the cosine similarity
    between the relation embedding and that class's query embedding.
    """
    m, k = rel.class_logits.shape
    if k != num_classes:
        raise ValueError("class count mismatch")
    sub_idx, obj_idx = select_indices(rel)
    boxes = det.box_list()
    # class_logits = cos / tau; undo the temperature to recover the raw cosine.
    scores = (rel.class_logits * rel.temperature_cls).detach().cpu().numpy()
    r = rel.relation_embeddings.detach().cpu().numpy()
    flat = [(-(scores[j, c]), j, c) for j in range(m) for c in range(k)]
    flat.sort()
    out = []
    for neg, j, c in flat[:top_k]:
        out.append(
            ScoredTriplet(
                subject_box=boxes[int(sub_idx[j])],
                object_box=boxes[int(obj_idx[j])],
                relation_embedding=r[j],
                class_index=c,
                score=float(-neg),
                query_index=j,
            )
        )
    return out


def pair_overlap(a: ScoredTriplet, b: ScoredTriplet) -> float:
    """Conjunctive overlap of two triplets: min of subject IoU and object IoU."""
    return min(iou(a.subject_box, b.subject_box), iou(a.object_box, b.object_box))


def pnms(triplets: list[ScoredTriplet], config: InferConfig = InferConfig()) -> list[ScoredTriplet]:
    """Greedy pairwise non-maximum suppression, per relationship class by default.

    Candidates are visited in descending score (ties by lower query index); a
    candidate is suppressed when its pair overlap with an already kept triplet
    of the same class (or of any class, in vanilla mode) strictly exceeds the
    threshold.
    """
    order = sorted(triplets, key=lambda t: (-t.score, t.query_index, t.class_index))
    kept: list[ScoredTriplet] = []
    for cand in order:
        suppressed = False
        for prev in kept:
            if config.per_class and prev.class_index != cand.class_index:
                continue
            if pair_overlap(cand, prev) > config.pnms_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(cand)
    return kept


def detect_relationships(
    model,
    record: SceneRecord,
    triplet_classes: list[Triplet],
    config: InferConfig = InferConfig(),
) -> list[ScoredTriplet]:
    """Full inference for one record against a list of relationship classes."""
    queries = model.relation_queries(triplet_classes)
    image = torch.from_numpy(record.image).to(DTYPE)
    with torch.no_grad():
        z = model.detector.encoder(image)
        det = DetectorOutput(
            instance_embeddings=z,
            boxes=model.detector.predict_boxes(z),
            class_logits=torch.zeros((z.shape[0], 0), dtype=DTYPE),
            temperature=model.detector.temperature(),
        )
        rel = model.relation_decoder(z, queries)
    return pnms(assemble(det, rel, len(triplet_classes), config.top_k), config)


def retrieve_by_image(
    model,
    query_record: SceneRecord,
    corpus: list[SceneRecord],
    triplet_classes: list[Triplet],
    config: InferConfig = InferConfig(),
    score_floor: float = -1.0,
) -> list[tuple[int, ScoredTriplet, float]]:
    """Image-conditioned retrieval: use the query image's top relation embedding as the query.

    Runs inference on the query record, takes the top-1 triplet's relation
    embedding, scores every corpus triplet by cosine similarity against it,
    and returns (corpus index, triplet, score) sorted descending.
    """
    query_triplets = detect_relationships(model, query_record, triplet_classes, config)
    query_triplets = [t for t in query_triplets if t.score > score_floor]
    if not query_triplets:
        raise ValueError("no query embedding: the query scene produced no triplet above the floor")
    q = query_triplets[0].relation_embedding
    q = q / np.linalg.norm(q)
    ranked = []
    for idx, record in enumerate(corpus):
        for trip in detect_relationships(model, record, triplet_classes, config):
            r = trip.relation_embedding
            sim = float(q @ (r / np.linalg.norm(r)))
            ranked.append((idx, trip, sim))
    ranked.sort(key=lambda item: (-item[2], item[0], item[1].query_index))
    return ranked


def triplet_class_strings(triplet_classes: list[Triplet]) -> list[str]:
    """Render each relationship class as its prompt string (the file-format class id)."""
    strings = [prompt_relation(t) for t in triplet_classes]
    if len(set(strings)) != len(strings):
        raise ValueError("relationship classes render to colliding prompt strings")
    return strings


def triplets_to_json(triplets: list[ScoredTriplet], class_strings: list[str]) -> list[dict]:
    """Serializable form of scored triplets: boxes cxcywh, class string, score."""
    return [
        {
            "sub_box": list(t.subject_box.to_array()),
            "obj_box": list(t.object_box.to_array()),
            "class_string": class_strings[t.class_index],
            "score": t.score,
        }
        for t in triplets
    ]
