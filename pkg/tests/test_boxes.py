import numpy as np
import pytest
from hypothesis import given, strategies as st

from reldet.boxes import Box, box_contains, boxes_overlap, iou, iou_matrix


def test_corner_conversion_clips():
    b = Box(0.95, 0.5, 0.2, 0.2)
    x1, y1, x2, y2 = b.corners()
    assert x2 == 1.0 and x1 == pytest.approx(0.85)
    assert y1 == pytest.approx(0.4) and y2 == pytest.approx(0.6)


def test_invalid_boxes_rejected():
    with pytest.raises(ValueError):
        Box(1.2, 0.5, 0.1, 0.1)
    with pytest.raises(ValueError):
        Box(0.5, 0.5, 0.0, 0.1)
    with pytest.raises(ValueError):
        Box(0.5, 0.5, 0.1, 1.5)


def test_iou_identical_and_disjoint():
    a = Box(0.3, 0.3, 0.2, 0.2)
    assert iou(a, a) == pytest.approx(1.0)
    b = Box(0.8, 0.8, 0.1, 0.1)
    assert iou(a, b) == 0.0


def test_iou_hand_case():
    # [0.2,0.2]x[0.4,0.4] vs [0.3,0.3]x[0.5,0.5]: inter 0.01, union 0.07
    a = Box(0.3, 0.3, 0.2, 0.2)
    b = Box(0.4, 0.4, 0.2, 0.2)
    assert iou(a, b) == pytest.approx(0.01 / 0.07)


def test_iou_matrix_matches_scalar():
    rng = np.random.default_rng(0)
    boxes_a = [Box(*(0.2 + 0.6 * rng.random(2)), *(0.05 + 0.3 * rng.random(2))) for _ in range(5)]
    boxes_b = [Box(*(0.2 + 0.6 * rng.random(2)), *(0.05 + 0.3 * rng.random(2))) for _ in range(4)]
    mat = iou_matrix(
        np.stack([b.to_array() for b in boxes_a]), np.stack([b.to_array() for b in boxes_b])
    )
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            assert mat[i, j] == pytest.approx(iou(a, b))


def test_overlap_and_containment():
    outer = Box(0.5, 0.5, 0.6, 0.6)
    inner = Box(0.5, 0.5, 0.2, 0.2)
    assert boxes_overlap(outer, inner)
    assert box_contains(outer, inner)
    assert not box_contains(inner, outer)
    assert not boxes_overlap(Box(0.1, 0.1, 0.1, 0.1), Box(0.9, 0.9, 0.1, 0.1))


@given(
    cx=st.floats(0.0, 1.0), cy=st.floats(0.0, 1.0),
    w=st.floats(0.01, 1.0), h=st.floats(0.01, 1.0),
)
def test_corners_always_in_unit_square(cx, cy, w, h):
    x1, y1, x2, y2 = Box(cx, cy, w, h).corners()
    assert 0.0 <= x1 <= x2 <= 1.0
    assert 0.0 <= y1 <= y2 <= 1.0
