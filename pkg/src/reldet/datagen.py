"""Synthetic relationship scenes, dataset files, and multi-dataset mixing.

Scenes are simple colored shapes on a plain background.  Relationship ground
truth is computed geometrically from the boxes with explicit margins, so every
annotation can be re-derived and checked exactly.  Two built-in vocabularies
describe the same scenes with different words ("red circle" vs "scarlet
disc"), linked through the bundled synonym table; they exist to exercise
label-space unification end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .boxes import Box, box_contains, boxes_overlap

VERTICAL_MARGIN = 0.05
HORIZONTAL_MARGIN = 0.05

COLORS_A = ("red", "green", "blue", "yellow")
SHAPES_A = ("circle", "square", "triangle")
PREDICATES_A = ("above", "below", "left of", "right of", "touching", "inside")

# Word-for-word renamings of vocabulary A; see data/synonyms.tsv.
WORDS_B = {
    "red": "scarlet",
    "green": "emerald",
    "blue": "cobalt",
    "yellow": "golden",
    "circle": "disc",
    "square": "block",
    "triangle": "wedge",
    "above": "over",
    "below": "under",
    "left": "leftward",
    "right": "rightward",
    "touching": "contacting",
    "inside": "within",
}

_RGB = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.70, 0.15),
    "blue": (0.12, 0.20, 0.85),
    "yellow": (0.90, 0.85, 0.10),
}
_BACKGROUND = 0.92

# Predicates whose meaning mirrors under a horizontal flip.
HFLIP_SWAPS = {
    "left of": "right of",
    "right of": "left of",
    "leftward of": "rightward of",
    "rightward of": "leftward of",
}


def _to_b(label: str) -> str:
    return " ".join(WORDS_B.get(w, w) for w in label.split())


def vocabulary(vocab_id: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(object labels, predicates) for a built-in vocabulary id ('A' or 'B')."""
    objects = tuple(f"{c} {s}" for c in COLORS_A for s in SHAPES_A)
    if vocab_id == "A":
        return objects, PREDICATES_A
    if vocab_id == "B":
        return tuple(_to_b(o) for o in objects), tuple(_to_b(p) for p in PREDICATES_A)
    raise ValueError(f"unknown vocabulary {vocab_id!r}")


@dataclass(frozen=True)
class Instance:
    box: Box
    labels: tuple[str, ...]


@dataclass(frozen=True)
class Relation:
    subject: int
    object: int
    predicates: tuple[str, ...]


@dataclass
class SceneRecord:
    """One annotated image: pixels, object instances, and pairwise relations."""

    image: np.ndarray
    instances: list[Instance]
    relations: list[Relation]
    dataset_id: str = ""
    synthetic_seed: int | None = None

    def validate(self) -> None:
        n = len(self.instances)
        for rel in self.relations:
            if not (0 <= rel.subject < n and 0 <= rel.object < n):
                raise ValueError(f"dangling relation ({rel.subject}, {rel.object}) with {n} instances")
            if not rel.predicates:
                raise ValueError("relation with no predicates")


def geometric_predicates(sub: Box, obj: Box) -> tuple[str, ...]:
    """All vocabulary-A predicates that hold for an ordered box pair.

    Image coordinates are y-down, so a subject whose center is at smaller y
    sits visually above the object.
    """
    preds = []
    if sub.cy + VERTICAL_MARGIN < obj.cy:
        preds.append("above")
    if obj.cy + VERTICAL_MARGIN < sub.cy:
        preds.append("below")
    if sub.cx + HORIZONTAL_MARGIN < obj.cx:
        preds.append("left of")
    if obj.cx + HORIZONTAL_MARGIN < sub.cx:
        preds.append("right of")
    if boxes_overlap(sub, obj):
        preds.append("touching")
    if box_contains(obj, sub):
        preds.append("inside")
    return tuple(preds)


def relations_from_boxes(boxes) -> list[Relation]:
    out = []
    for i, sub in enumerate(boxes):
        for j, obj in enumerate(boxes):
            if i == j:
                continue
            preds = geometric_predicates(sub, obj)
            if preds:
                out.append(Relation(i, j, preds))
    return out


def _render(boxes, labels, image_size: int) -> np.ndarray:
    img = np.full((image_size, image_size, 3), _BACKGROUND, dtype=np.float64)
    ys, xs = np.mgrid[0:image_size, 0:image_size]
    # Pixel centers in normalized coordinates.
    xs = (xs + 0.5) / image_size
    ys = (ys + 0.5) / image_size
    for box, label in zip(boxes, labels):
        color_word, shape_word = label.split()
        color = _RGB[color_word]
        x1, y1, x2, y2 = box.corners()
        if shape_word == "square":
            mask = (xs >= x1) & (xs <= x2) & (ys >= y1) & (ys <= y2)
        elif shape_word == "circle":
            rx = max((x2 - x1) / 2.0, 1e-9)
            ry = max((y2 - y1) / 2.0, 1e-9)
            mask = ((xs - box.cx) / rx) ** 2 + ((ys - box.cy) / ry) ** 2 <= 1.0
        elif shape_word == "triangle":
            h = max(y2 - y1, 1e-9)
            # Upward triangle: apex at top center, base along the bottom edge.
            frac = np.clip((ys - y1) / h, 0.0, 1.0)
            half = (x2 - x1) / 2.0 * frac
            mask = (ys >= y1) & (ys <= y2) & (np.abs(xs - box.cx) <= half)
        else:
            raise ValueError(f"unknown shape {shape_word!r}")
        img[mask] = color
    return img


def generate_scene(
    rng_or_seed,
    vocab_id: str = "A",
    image_size: int = 64,
    min_shapes: int = 2,
    max_shapes: int = 6,
    detection_only: bool = False,
    dataset_id: str = "",
    label_pool: int | None = None,
) -> SceneRecord:
    """Render a scene of 2-6 distinct colored shapes with geometric relations.

    The record is a pure function of the seed (or generator state), the
    vocabulary id, and the size arguments.  Vocabulary B scenes are the same
    scenes with every word renamed, so paired seeds produce label-isomorphic
    records.  `label_pool` restricts sampling to the first k object labels,
    which densifies per-class statistics in small datasets.
    """
    if isinstance(rng_or_seed, np.random.Generator):
        rng = rng_or_seed
        seed = None
    else:
        seed = int(rng_or_seed)
        rng = np.random.Generator(np.random.PCG64(seed))
    objects_a = [f"{c} {s}" for c in COLORS_A for s in SHAPES_A]
    if label_pool is not None:
        if not min_shapes <= label_pool <= len(objects_a):
            raise ValueError("label_pool out of range")
        objects_a = objects_a[:label_pool]
    n = int(rng.integers(min_shapes, max_shapes + 1))
    picked = [objects_a[i] for i in rng.choice(len(objects_a), size=n, replace=False)]
    boxes: list[Box] = []
    nest = n >= 2 and rng.random() < 0.3
    if nest:
        w = float(rng.uniform(0.4, 0.55))
        h = float(rng.uniform(0.4, 0.55))
        cx = float(rng.uniform(0.3, 0.7))
        cy = float(rng.uniform(0.3, 0.7))
        outer = Box(cx, cy, w, h)
        iw = float(rng.uniform(0.1, 0.18))
        ih = float(rng.uniform(0.1, 0.18))
        x1, y1, x2, y2 = outer.corners()
        icx = float(rng.uniform(x1 + iw / 2, x2 - iw / 2))
        icy = float(rng.uniform(y1 + ih / 2, y2 - ih / 2))
        boxes.extend([outer, Box(icx, icy, iw, ih)])
    while len(boxes) < n:
        w = float(rng.uniform(0.14, 0.34))
        h = float(rng.uniform(0.14, 0.34))
        cx = float(rng.uniform(0.5 * w + 0.02, 1.0 - 0.5 * w - 0.02))
        cy = float(rng.uniform(0.5 * h + 0.02, 1.0 - 0.5 * h - 0.02))
        boxes.append(Box(cx, cy, w, h))
    relations = [] if detection_only else relations_from_boxes(boxes)
    labels = picked
    if vocab_id == "B":
        labels = [_to_b(l) for l in labels]
        relations = [replace(r, predicates=tuple(_to_b(p) for p in r.predicates)) for r in relations]
    elif vocab_id != "A":
        raise ValueError(f"unknown vocabulary {vocab_id!r}")
    record = SceneRecord(
        image=_render(boxes, picked, image_size),
        instances=[Instance(box, (label,)) for box, label in zip(boxes, labels)],
        relations=relations,
        dataset_id=dataset_id,
        synthetic_seed=seed,
    )
    record.validate()
    return record


@dataclass
class Dataset:
    """A named collection of records with its declared vocabulary."""

    dataset_id: str
    objects: tuple[str, ...]
    predicates: tuple[str, ...]
    records: list[SceneRecord] = field(default_factory=list)
    generator_params: dict | None = None

    def triplet_classes(self) -> list[tuple[str, str, str]]:
        """Distinct (subject label, predicate, object label) triples in the records."""
        seen = {}
        for rec in self.records:
            for rel in rec.relations:
                sub = rec.instances[rel.subject].labels[0]
                obj = rec.instances[rel.object].labels[0]
                for pred in rel.predicates:
                    seen[(sub, pred, obj)] = None
        return list(seen)


def generate_dataset(
    seed: int,
    num_records: int,
    vocab_id: str = "A",
    image_size: int = 64,
    min_shapes: int = 2,
    max_shapes: int = 6,
    detection_only: bool = False,
    dataset_id: str | None = None,
    label_pool: int | None = None,
) -> Dataset:
    """Generate `num_records` scenes with per-record seeds derived from `seed`."""
    if dataset_id is None:
        dataset_id = f"synthetic-{vocab_id}-{seed}"
    root = np.random.SeedSequence(seed)
    record_seeds = [int(s.generate_state(1)[0]) for s in root.spawn(num_records)]
    objects, predicates = vocabulary(vocab_id)
    params = {
        "vocabulary_id": vocab_id,
        "image_size": image_size,
        "min_shapes": min_shapes,
        "max_shapes": max_shapes,
        "detection_only": detection_only,
        "label_pool": label_pool,
    }
    records = [
        generate_scene(
            rs,
            vocab_id=vocab_id,
            image_size=image_size,
            min_shapes=min_shapes,
            max_shapes=max_shapes,
            detection_only=detection_only,
            dataset_id=dataset_id,
            label_pool=label_pool,
        )
        for rs in record_seeds
    ]
    return Dataset(dataset_id, objects, predicates, records, generator_params=params)


def _record_to_json(rec: SceneRecord, pixels_path: str | None = None) -> dict:
    if rec.synthetic_seed is not None:
        image = {"synthetic_seed": rec.synthetic_seed}
    elif pixels_path is not None:
        image = {"pixels_path": pixels_path}
    else:
        raise ValueError("record has no synthetic seed and no pixels path")
    return {
        "image": image,
        "instances": [
            {"box": list(inst.box.to_array()), "labels": list(inst.labels)} for inst in rec.instances
        ],
        "relations": [
            {"sub": rel.subject, "obj": rel.object, "predicates": list(rel.predicates)}
            for rel in rec.relations
        ],
    }


def save_dataset(dataset: Dataset, path, vocab_id: str | None = None) -> None:
    """Write the documented JSON schema; synthetic records serialize by seed.

    The generator parameters ride along so loading can re-render the exact
    same pixels from the stored seeds.
    """
    payload = {
        "vocabulary": {"objects": list(dataset.objects), "predicates": list(dataset.predicates)},
        "records": [_record_to_json(rec) for rec in dataset.records],
    }
    if dataset.generator_params is not None:
        payload["generator"] = dataset.generator_params
    elif vocab_id is not None:
        payload["generator"] = {"vocabulary_id": vocab_id}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(path, image_size: int = 64, dataset_id: str | None = None) -> Dataset:
    """Load and validate a dataset file.

    Synthetic records are re-rendered from their stored seeds; files may also
    point at raw pixel arrays (.npy).  Detection-only files (no relations)
    load fine.  Schema violations name the offending record and field.
    """
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if dataset_id is None:
        dataset_id = str(path)
    try:
        vocab = payload["vocabulary"]
        objects = tuple(vocab["objects"])
        predicates = tuple(vocab["predicates"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: missing vocabulary section: {exc}") from exc
    generator = payload.get("generator") or {}
    vocab_id = generator.get("vocabulary_id", "A")
    scene_kwargs = {
        "image_size": generator.get("image_size", image_size),
        "min_shapes": generator.get("min_shapes", 2),
        "max_shapes": generator.get("max_shapes", 6),
        "detection_only": generator.get("detection_only", False),
        "label_pool": generator.get("label_pool"),
    }
    known = set(objects)
    known_preds = set(predicates)
    records = []
    for i, rj in enumerate(payload.get("records", [])):
        where = f"{path}: record {i}"
        image_spec = rj.get("image")
        if not isinstance(image_spec, dict):
            raise ValueError(f"{where}: field 'image' missing or malformed")
        instances = []
        for k, ij in enumerate(rj.get("instances", [])):
            try:
                box = Box.from_array(ij["box"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{where}: instance {k} field 'box': {exc}") from exc
            labels = tuple(ij.get("labels", ()))
            if not labels:
                raise ValueError(f"{where}: instance {k} field 'labels' is empty")
            for lab in labels:
                if lab not in known:
                    raise ValueError(f"{where}: instance {k} label {lab!r} not in vocabulary")
            instances.append(Instance(box, labels))
        relations = []
        for k, rel in enumerate(rj.get("relations", [])):
            try:
                sub, obj = int(rel["sub"]), int(rel["obj"])
            except (KeyError, TypeError) as exc:
                raise ValueError(f"{where}: relation {k}: {exc}") from exc
            if not (0 <= sub < len(instances)) or not (0 <= obj < len(instances)):
                raise ValueError(f"{where}: dangling relation {k} ({sub}, {obj})")
            preds = tuple(rel.get("predicates", ()))
            if not preds:
                raise ValueError(f"{where}: relation {k} field 'predicates' is empty")
            for p in preds:
                if p not in known_preds:
                    raise ValueError(f"{where}: relation {k} predicate {p!r} not in vocabulary")
            relations.append(Relation(sub, obj, preds))
        if "synthetic_seed" in image_spec:
            seed = int(image_spec["synthetic_seed"])
            rerendered = generate_scene(seed, vocab_id=vocab_id, **scene_kwargs)
            image = rerendered.image
            rec = SceneRecord(image, instances, relations, dataset_id, synthetic_seed=seed)
        elif "pixels_path" in image_spec:
            image = np.load(image_spec["pixels_path"])
            rec = SceneRecord(np.asarray(image, dtype=np.float64), instances, relations, dataset_id)
        else:
            raise ValueError(f"{where}: image must give 'synthetic_seed' or 'pixels_path'")
        rec.validate()
        records.append(rec)
    return Dataset(dataset_id, objects, predicates, records, generator_params=generator or None)


@dataclass(frozen=True)
class MixSpec:
    """Per-dataset sampling probabilities for batch mixing."""

    proportions: dict[str, float]

    def __post_init__(self):
        total = sum(self.proportions.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixing probabilities sum to {total}, expected 1")
        for k, v in self.proportions.items():
            if v < 0:
                raise ValueError(f"negative probability for {k!r}")


def mix_stream(datasets: list[Dataset], spec: MixSpec, rng: np.random.Generator):
    """Infinite record stream: i.i.d. dataset choice per record, shuffled epochs within."""
    ids = [d.dataset_id for d in datasets]
    if set(ids) != set(spec.proportions):
        raise ValueError("mix spec does not cover exactly the given datasets")
    for d in datasets:
        if spec.proportions[d.dataset_id] > 0 and not d.records:
            raise ValueError(f"dataset {d.dataset_id!r} has no records but positive probability")
    probs = np.array([spec.proportions[i] for i in ids])
    cursors = {i: [] for i in ids}
    by_id = {d.dataset_id: d for d in datasets}
    while True:
        ds_id = ids[int(rng.choice(len(ids), p=probs))]
        if not cursors[ds_id]:
            order = list(rng.permutation(len(by_id[ds_id].records)))
            cursors[ds_id] = order
        idx = cursors[ds_id].pop()
        yield by_id[ds_id].records[int(idx)]


def object_label_frequency(datasets: list[Dataset]) -> dict[str, int]:
    """Per-instance label counts across datasets (for negative sampling)."""
    freq: dict[str, int] = {}
    for ds in datasets:
        for rec in ds.records:
            for inst in rec.instances:
                for lab in inst.labels:
                    freq[lab] = freq.get(lab, 0) + 1
    return freq


def triplet_class_frequency(datasets: list[Dataset]) -> dict[tuple[str, str, str], int]:
    """Per-annotation triplet-class counts (also defines the rare split)."""
    freq: dict[tuple[str, str, str], int] = {}
    for ds in datasets:
        for rec in ds.records:
            for rel in rec.relations:
                sub = rec.instances[rel.subject].labels[0]
                obj = rec.instances[rel.object].labels[0]
                for pred in rel.predicates:
                    key = (sub, pred, obj)
                    freq[key] = freq.get(key, 0) + 1
    return freq
