"""Bounding boxes and overlap geometry.

Boxes use continuous corner coordinates (x1, y1, x2, y2) in image pixels;
width is x2 - x1 with no "+1" pixel convention, which matches the sub-pixel
corner positions produced by offset decoding.
"""

from __future__ import annotations

from dataclasses import dataclass


class InvariantError(RuntimeError):
    """An internal consistency check failed."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box; x1 <= x2 and y1 <= y2 always hold."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(
                f"invalid box: ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_xywh(self) -> tuple[float, float, float, float]:
        return self.x1, self.y1, self.width, self.height


@dataclass(frozen=True)
class GroundTruth:
    """A labeled ground-truth box; class_id lies in [0, C)."""

    box: BBox
    class_id: int

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Symmetric; 1.0 exactly for identical boxes of positive area. Pairs with
    empty intersection give 0.0, as does any pair of zero-area boxes (the
    0/0 case is defined to be 0).
    """
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union
