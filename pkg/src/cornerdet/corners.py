"""Corner-keypoint decoding and training-target rendering.

Heatmaps are per-class probability maps at a stride-4-reduced resolution:
``tl_heat`` / ``br_heat`` have shape (C, H, W), and the shared offset maps
``tl_off`` / ``br_off`` have shape (2, H, W) holding the x-offset plane
first, then the y-offset plane, with fractional values in [0, 1).

A corner at heatmap cell (row, col) with offsets (ox, oy) sits at image
position x = (col + ox) * stride, y = (row + oy) * stride.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cornerdet.geometry import GroundTruth

STRIDE = 4

TOP_LEFT = "top-left"
BOTTOM_RIGHT = "bottom-right"


@dataclass(frozen=True)
class CornerKeypoint:
    """A decoded corner: grid cell plus sub-pixel image position and score."""

    kind: str
    class_id: int
    x: float
    y: float
    score: float
    cell: tuple[int, int]


@dataclass(frozen=True)
class HeatmapSet:
    """Corner heatmaps and their shared offset planes for one image."""

    tl_heat: np.ndarray
    br_heat: np.ndarray
    tl_off: np.ndarray
    br_off: np.ndarray

    def __post_init__(self):
        c, h, w = self.tl_heat.shape
        if self.br_heat.shape != (c, h, w):
            raise ValueError("top-left and bottom-right heatmap shapes differ")
        if self.tl_off.shape != (2, h, w) or self.br_off.shape != (2, h, w):
            raise ValueError("offset maps must be (2, H, W) matching the heatmaps")

    @property
    def num_classes(self) -> int:
        return self.tl_heat.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.tl_heat.shape[1], self.tl_heat.shape[2]


def local_max_suppress(heat: np.ndarray, window: int = 3) -> np.ndarray:
    """Zero every cell that is not a maximum of its window x window patch.

    Ties keep the value, so plateau cells all survive. The neighborhood is
    clipped at map borders. window must be odd.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    heat = np.asarray(heat, dtype=np.float32)
    if window == 1:
        return heat.copy()
    pad = window // 2
    padded = np.pad(
        heat,
        ((0, 0), (pad, pad), (pad, pad)),
        mode="constant",
        constant_values=-np.inf,
    )
    patches = np.lib.stride_tricks.sliding_window_view(padded, (window, window), axis=(1, 2))
    neighborhood_max = patches.max(axis=(-2, -1))
    return np.where(heat == neighborhood_max, heat, np.float32(0.0))


def decode_corners(hm: HeatmapSet, kind: str, k: int, stride: int = STRIDE) -> list[CornerKeypoint]:
    """Extract the k best corner keypoints of one kind from all heatmaps.

    Selection runs jointly over all C*H*W cells after 3x3 local-max
    suppression. Results come back in descending score order; equal scores
    are broken by ascending (class, row, col), which a stable sort on the
    flat cell index provides for free.
    """
    if kind == TOP_LEFT:
        heat, off = hm.tl_heat, hm.tl_off
    elif kind == BOTTOM_RIGHT:
        heat, off = hm.br_heat, hm.br_off
    else:
        raise ValueError(f"unknown corner kind: {kind!r}")

    c, h, w = heat.shape
    if not 1 <= k <= c * h * w:
        raise ValueError(f"k must be in [1, {c * h * w}], got {k}")

    suppressed = local_max_suppress(heat, window=3)
    flat = suppressed.ravel()
    order = np.argsort(-flat, kind="stable")[:k]

    cls, rows, cols = np.unravel_index(order, (c, h, w))
    ox = off[0, rows, cols].astype(np.float32)
    oy = off[1, rows, cols].astype(np.float32)
    xs = (cols.astype(np.float32) + ox) * np.float32(stride)
    ys = (rows.astype(np.float32) + oy) * np.float32(stride)

    return [
        CornerKeypoint(
            kind=kind,
            class_id=int(cls[i]),
            x=float(xs[i]),
            y=float(ys[i]),
            score=float(flat[order[i]]),
            cell=(int(rows[i]), int(cols[i])),
        )
        for i in range(k)
    ]


def gaussian_radius(height: float, width: float, min_overlap: float = 0.7) -> float:
    """Largest corner displacement radius keeping box IoU >= min_overlap.

    Solves the three quadratic worst cases (both corners shifted inward,
    outward, or across) for a height x width box and returns the smallest
    root, so any displacement within the radius still yields IoU >=
    min_overlap with the original box.
    """
    a1 = 1.0
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    sq1 = math.sqrt(b1 * b1 - 4 * a1 * c1)
    r1 = (b1 - sq1) / (2 * a1)

    a2 = 4.0
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    sq2 = math.sqrt(b2 * b2 - 4 * a2 * c2)
    r2 = (b2 - sq2) / (2 * a2)

    a3 = 4.0 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    sq3 = math.sqrt(b3 * b3 - 4 * a3 * c3)
    r3 = (b3 + sq3) / (2 * a3)

    return min(r1, r2, r3)


def _splat(channel: np.ndarray, row: int, col: int, radius: int) -> None:
    """Max-combine an unnormalized Gaussian (peak 1 at (row, col)) into channel."""
    h, w = channel.shape
    if radius <= 0:
        channel[row, col] = max(channel[row, col], np.float32(1.0))
        return
    sigma = radius / 3.0
    r0, r1 = max(0, row - radius), min(h, row + radius + 1)
    c0, c1 = max(0, col - radius), min(w, col + radius + 1)
    ys = np.arange(r0, r1, dtype=np.float64) - row
    xs = np.arange(c0, c1, dtype=np.float64) - col
    patch = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))
    region = channel[r0:r1, c0:c1]
    np.maximum(region, patch.astype(np.float32), out=region)


def gaussian_targets(
    gts: list[GroundTruth],
    num_classes: int,
    height: int,
    width: int,
    stride: int = STRIDE,
    min_overlap: float = 0.7,
) -> HeatmapSet:
    """Render training-target heatmaps and offset planes for a scene.

    Each ground-truth corner splats an unnormalized 2-D Gaussian with peak
    exactly 1 at its stride-reduced cell onto its class channel; overlapping
    splats combine by element-wise max. The offset planes record the
    fractional parts of the downscaled corner coordinates at the peak cells.
    """
    tl_heat = np.zeros((num_classes, height, width), dtype=np.float32)
    br_heat = np.zeros((num_classes, height, width), dtype=np.float32)
    tl_off = np.zeros((2, height, width), dtype=np.float32)
    br_off = np.zeros((2, height, width), dtype=np.float32)

    for gt in gts:
        if gt.class_id >= num_classes:
            raise ValueError(f"class_id {gt.class_id} outside [0, {num_classes})")
        box = gt.box
        radius = max(0, int(gaussian_radius(box.height / stride, box.width / stride, min_overlap)))
        for heat, off, cx, cy in (
            (tl_heat, tl_off, box.x1, box.y1),
            (br_heat, br_off, box.x2, box.y2),
        ):
            fx, fy = cx / stride, cy / stride
            col, row = int(math.floor(fx)), int(math.floor(fy))
            if not (0 <= col < width and 0 <= row < height):
                raise ValueError(
                    f"corner ({cx}, {cy}) maps to cell ({row}, {col}) "
                    f"outside the {height}x{width} grid"
                )
            _splat(heat[gt.class_id], row, col, radius)
            off[0, row, col] = np.float32(fx - col)
            off[1, row, col] = np.float32(fy - row)

    return HeatmapSet(tl_heat=tl_heat, br_heat=br_heat, tl_off=tl_off, br_off=br_off)
