"""Axis-aligned boxes in normalized center-size coordinates, plus overlap measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """A box as (cx, cy, w, h), all in [0, 1] image-relative units.

    Centers may sit anywhere in the image; width/height are strictly positive.
    Corner coordinates are clipped to the image when converting.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center out of range: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box size out of range: ({self.w}, {self.h})")

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2), clipped to [0, 1]."""
        x1 = max(0.0, self.cx - self.w / 2.0)
        y1 = max(0.0, self.cy - self.h / 2.0)
        x2 = min(1.0, self.cx + self.w / 2.0)
        y2 = min(1.0, self.cy + self.h / 2.0)
        return x1, y1, x2, y2

    def area(self) -> float:
        return self.w * self.h

    def to_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "Box":
        cx, cy, w, h = (float(v) for v in a)
        return Box(cx, cy, w, h)


def cxcywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    """Vectorized center-size -> corner conversion. No clipping."""
    boxes = np.asarray(boxes, dtype=np.float64)
    half = boxes[..., 2:4] / 2.0
    return np.concatenate([boxes[..., 0:2] - half, boxes[..., 0:2] + half], axis=-1)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes (corner form, clipped)."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter
    return inter / union if union > 0.0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two cxcywh arrays, shapes (n,4) and (m,4) -> (n,m)."""
    A = cxcywh_to_xyxy(np.asarray(a, dtype=np.float64)).clip(0.0, 1.0)
    B = cxcywh_to_xyxy(np.asarray(b, dtype=np.float64)).clip(0.0, 1.0)
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def boxes_overlap(a: Box, b: Box) -> bool:
    """True when the intersection has strictly positive area."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    return min(ax2, bx2) > max(ax1, bx1) and min(ay2, by2) > max(ay1, by1)


def box_contains(outer: Box, inner: Box) -> bool:
    """True when `inner` lies fully within `outer` (corner form)."""
    ox1, oy1, ox2, oy2 = outer.corners()
    ix1, iy1, ix2, iy2 = inner.corners()
    return ix1 >= ox1 and iy1 >= oy1 and ix2 <= ox2 and iy2 <= oy2
