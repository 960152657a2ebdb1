"""Inference-side filtering and rescoring of classified proposals.

The stages, in pipeline order: keep proposals whose objectness clears a low
threshold (0.2 operating default), assign each survivor up to two class
labels (corner class and the class head's argmax), fuse corner and head
scores into one normalized confidence, decay overlapping same-class boxes
with Gaussian soft-NMS, and keep the top 100.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence, TypeVar

import numpy as np

from cornerdet.geometry import BBox, iou
from cornerdet.proposals import Proposal

SOFT_NMS_SIGMA = 0.5
SOFT_NMS_PRUNE = 1e-3
TOP_K = 100

SOURCE_CORNER = "corner-class"
SOURCE_HEAD = "head-class"

T = TypeVar("T")


@dataclass(frozen=True)
class Detection:
    """A final scored box; `source` records which classifier named the class."""

    box: BBox
    class_id: int
    score: float
    source: str = SOURCE_CORNER


def filter_by_objectness(proposals: Sequence[T], scores, threshold: float) -> list[T]:
    """Keep exactly the entries with score >= threshold, order preserved.

    The boundary is inclusive so that a deliberately low threshold lets
    borderline proposals survive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(proposals),):
        raise ValueError("scores must have one entry per proposal")
    return [p for p, s in zip(proposals, scores) if s >= threshold]


def fuse_scores(s1: float, s2: float) -> float:
    """Fuse corner score s1 and head score s2 into one confidence in [0, 1].

    The raw product (s1 + 0.5) * (s2 + 0.5) lives in (0.25, 2.25); the
    affine map (raw - 0.25) / 2 rescales that attainable interval onto
    [0, 1] while preserving order.
    """
    for name, v in (("s1", s1), ("s2", s2)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    raw = (s1 + 0.5) * (s2 + 0.5)
    return (raw - 0.25) / 2.0


def assign_labels(proposal: Proposal, q: np.ndarray) -> list[Detection]:
    """Turn one survived proposal into one or two detections.

    Candidate classes are the corner class and the head's argmax. When they
    agree the proposal yields a single detection; otherwise two detections
    share the box, each fused with its own class probability.
    """
    q = np.asarray(q, dtype=np.float64)
    corner_cls = proposal.class_id
    head_cls = int(np.argmax(q))
    dets = [
        Detection(
            box=proposal.box,
            class_id=corner_cls,
            score=fuse_scores(proposal.corner_score, float(q[corner_cls])),
            source=SOURCE_CORNER,
        )
    ]
    if head_cls != corner_cls:
        dets.append(
            Detection(
                box=proposal.box,
                class_id=head_cls,
                score=fuse_scores(proposal.corner_score, float(q[head_cls])),
                source=SOURCE_HEAD,
            )
        )
    return dets


def soft_nms(
    dets: Sequence[Detection],
    sigma: float = SOFT_NMS_SIGMA,
    prune: float = SOFT_NMS_PRUNE,
) -> list[Detection]:
    """Gaussian soft-NMS, run independently per class.

    Repeatedly select the highest-scoring remaining box (ties broken by
    original index), then decay every other same-class score by
    exp(-iou^2 / sigma); boxes whose running score drops below `prune` are
    discarded. Scores never increase and geometry never changes. The result
    is ordered by descending final score, ties by original index.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    boxes = [d.box for d in dets]
    picked: list[tuple[int, float]] = []
    for cls in sorted({d.class_id for d in dets}):
        remaining = [i for i, d in enumerate(dets) if d.class_id == cls]
        scores = {i: dets[i].score for i in remaining}
        while remaining:
            best = max(remaining, key=lambda i: (scores[i], -i))
            remaining.remove(best)
            picked.append((best, scores[best]))
            ref = boxes[best]
            for i in remaining:
                ov = iou(ref, boxes[i])
                scores[i] *= math.exp(-(ov * ov) / sigma)
            remaining = [i for i in remaining if scores[i] >= prune]
    picked.sort(key=lambda t: (-t[1], t[0]))
    return [replace(dets[i], score=s) for i, s in picked]


def top_k_truncate(dets: Sequence[Detection], k: int = TOP_K) -> list[Detection]:
    """The k highest-scoring detections, descending; ties by original index."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    return [dets[i] for i in order[:k]]


def detection_records(image_id: int, dets: Sequence[Detection]) -> list[dict]:
    """Detections as interchange records with COCO-style [x, y, w, h] boxes."""
    out = []
    for d in dets:
        x, y, w, h = d.box.as_xywh()
        out.append(
            {
                "image_id": int(image_id),
                "category_id": int(d.class_id),
                "bbox": [float(x), float(y), float(w), float(h)],
                "score": float(d.score),
            }
        )
    return out


def write_detections(path, records: list[dict]) -> None:
    """Write a detection dump: one JSON array of records."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_detections(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise ValueError(f"{path}: detection dump must be a JSON array")
    return records
