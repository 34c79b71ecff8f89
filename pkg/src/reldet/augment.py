"""Mosaic grids, random crops, and horizontal flips with exact annotation remaps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Box
from .datagen import HFLIP_SWAPS, Instance, Relation, SceneRecord


@dataclass(frozen=True)
class MosaicSpec:
    """Grid-size sampling probabilities for 1x1, 2x2, and 3x3 mosaics."""

    probabilities: tuple[float, float, float] = (0.4, 0.3, 0.3)

    def __post_init__(self):
        if abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise ValueError("mosaic probabilities must sum to 1")


def _resize_nearest(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = image.shape[:2]
    rows = np.minimum((np.arange(out_h) * in_h) // out_h, in_h - 1).astype(int)
    cols = np.minimum((np.arange(out_w) * in_w) // out_w, in_w - 1).astype(int)
    return image[rows][:, cols]


def remap_box(box: Box, g: int, cell: tuple[int, int]) -> Box:
    """Map a box from tile-local coordinates into its cell of a g x g mosaic."""
    row, col = cell
    if not (0 <= row < g and 0 <= col < g):
        raise ValueError(f"cell {cell} outside a {g}x{g} grid")
    return Box((col + box.cx) / g, (row + box.cy) / g, box.w / g, box.h / g)


def sample_mosaic(stream, rng: np.random.Generator, spec: MosaicSpec = MosaicSpec()) -> SceneRecord:
    """Assemble the next g**2 records from `stream` into one mosaic record.

    Tiles may come from different datasets; their instances and relations are
    concatenated with re-indexed subject/object references.
    """
    g = int(rng.choice(3, p=np.asarray(spec.probabilities))) + 1
    records = []
    for _ in range(g * g):
        try:
            records.append(next(stream))
        except StopIteration:
            raise ValueError("record stream exhausted while assembling a mosaic") from None
    if g == 1:
        return records[0]
    size = records[0].image.shape[0]
    edges = [round(k * size / g) for k in range(g + 1)]
    canvas = np.zeros((size, size, 3), dtype=np.float64)
    instances: list[Instance] = []
    relations: list[Relation] = []
    dataset_ids = []
    for idx, rec in enumerate(records):
        row, col = divmod(idx, g)
        y0, y1 = edges[row], edges[row + 1]
        x0, x1 = edges[col], edges[col + 1]
        canvas[y0:y1, x0:x1] = _resize_nearest(rec.image, y1 - y0, x1 - x0)
        offset = len(instances)
        for inst in rec.instances:
            instances.append(Instance(remap_box(inst.box, g, (row, col)), inst.labels))
        for rel in rec.relations:
            relations.append(Relation(rel.subject + offset, rel.object + offset, rel.predicates))
        dataset_ids.append(rec.dataset_id)
    out = SceneRecord(
        image=canvas,
        instances=instances,
        relations=relations,
        dataset_id="+".join(dict.fromkeys(dataset_ids)),
    )
    out.validate()
    return out


def hflip(record: SceneRecord, swaps: dict[str, str] | None = None) -> SceneRecord:
    """Mirror the image left-right; orientation-sensitive predicates swap partners."""
    if swaps is None:
        swaps = HFLIP_SWAPS
    instances = [
        Instance(Box(1.0 - inst.box.cx, inst.box.cy, inst.box.w, inst.box.h), inst.labels)
        for inst in record.instances
    ]
    relations = []
    for rel in record.relations:
        preds = []
        for p in rel.predicates:
            if p in swaps:
                partner = swaps[p]
                if not partner:
                    raise ValueError(f"predicate {p!r} is orientation-sensitive but has no swap partner")
                preds.append(partner)
            else:
                preds.append(p)
        relations.append(Relation(rel.subject, rel.object, tuple(preds)))
    out = SceneRecord(
        image=record.image[:, ::-1].copy(),
        instances=instances,
        relations=relations,
        dataset_id=record.dataset_id,
    )
    out.validate()
    return out


def random_crop(record: SceneRecord, rng: np.random.Generator, min_scale: float = 0.5) -> SceneRecord:
    """Crop a sub-window of area >= min_scale and rescale it to full size.

    Boxes are clipped to the window; instances keeping less than 25% of their
    original area are dropped together with any relation that references
    them.  A crop that drops every instance is resampled up to 10 times, then
    the record passes through unchanged.
    """
    if not (0.0 < min_scale <= 1.0):
        raise ValueError("min_scale must be in (0, 1]")
    if min_scale == 1.0:
        return record
    size = record.image.shape[0]
    for _ in range(10):
        area = float(rng.uniform(min_scale, 1.0))
        aspect = float(rng.uniform(0.8, 1.25))
        wf = min(1.0, np.sqrt(area * aspect))
        hf = min(1.0, area / wf)
        x0 = float(rng.uniform(0.0, 1.0 - wf))
        y0 = float(rng.uniform(0.0, 1.0 - hf))
        kept: list[tuple[int, Instance]] = []
        for i, inst in enumerate(record.instances):
            bx1, by1, bx2, by2 = inst.box.corners()
            ix1, iy1 = max(bx1, x0), max(by1, y0)
            ix2, iy2 = min(bx2, x0 + wf), min(by2, y0 + hf)
            if ix2 <= ix1 or iy2 <= iy1:
                continue
            if (ix2 - ix1) * (iy2 - iy1) < 0.25 * inst.box.area():
                continue
            # Window coordinates, rescaled back to the unit square.
            nx1, nx2 = (ix1 - x0) / wf, (ix2 - x0) / wf
            ny1, ny2 = (iy1 - y0) / hf, (iy2 - y0) / hf
            box = Box((nx1 + nx2) / 2.0, (ny1 + ny2) / 2.0, nx2 - nx1, ny2 - ny1)
            kept.append((i, Instance(box, inst.labels)))
        if not kept and record.instances:
            continue
        index_map = {old: new for new, (old, _) in enumerate(kept)}
        relations = [
            Relation(index_map[rel.subject], index_map[rel.object], rel.predicates)
            for rel in record.relations
            if rel.subject in index_map and rel.object in index_map
        ]
        px0, py0 = int(round(x0 * size)), int(round(y0 * size))
        px1 = max(px0 + 1, int(round((x0 + wf) * size)))
        py1 = max(py0 + 1, int(round((y0 + hf) * size)))
        window = record.image[py0:min(py1, size), px0:min(px1, size)]
        out = SceneRecord(
            image=_resize_nearest(window, size, size),
            instances=[inst for _, inst in kept],
            relations=relations,
            dataset_id=record.dataset_id,
        )
        out.validate()
        return out
    return record
