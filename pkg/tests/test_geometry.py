import pytest
from hypothesis import given
from hypothesis import strategies as st

from cornerdet.geometry import BBox, GroundTruth, iou

coords = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False)
sizes = st.floats(min_value=0.0, max_value=50.0, allow_nan=False)


@st.composite
def boxes(draw):
    x1 = draw(coords)
    y1 = draw(coords)
    return BBox(x1, y1, x1 + draw(sizes), y1 + draw(sizes))


def test_identical_boxes():
    a = BBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0


def test_disjoint_boxes():
    assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0


def test_partial_overlap():
    # intersection 1, union 4 + 4 - 1 = 7
    assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)) == pytest.approx(1 / 7)


def test_zero_area_pairs():
    point = BBox(1, 1, 1, 1)
    assert iou(point, point) == 0.0
    assert iou(point, BBox(0, 0, 5, 5)) == 0.0


@given(boxes(), boxes())
def test_symmetry_and_range(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(boxes())
def test_self_iou(a):
    if a.area > 0:
        assert iou(a, a) == 1.0
    else:
        assert iou(a, a) == 0.0


def test_invalid_box_rejected():
    with pytest.raises(ValueError):
        BBox(2, 0, 1, 5)
    with pytest.raises(ValueError):
        BBox(0, 5, 1, 4)


def test_box_helpers():
    b = BBox(1, 2, 4, 8)
    assert b.width == 3 and b.height == 6 and b.area == 18
    assert b.as_xywh() == (1, 2, 3, 6)


def test_ground_truth_class_gate():
    with pytest.raises(ValueError):
        GroundTruth(box=BBox(0, 0, 1, 1), class_id=-1)
