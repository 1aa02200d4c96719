"""Pseudo ground truth for object detection: tight axis-aligned boxes from
labeled instances, box IoU, and the scene-presence target vector."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import LabelMatrix, PointCloud

DEFAULT_MIN_POINTS = 50


@dataclass(frozen=True)
class Box3D:
    min_corner: np.ndarray
    max_corner: np.ndarray
    class_id: int
    instance_id: int
    point_count: int

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("box corners must be 3-vectors")
        if (lo > hi).any():
            raise ValueError(f"box min {lo} exceeds max {hi}")
        if self.point_count < 1:
            raise ValueError("point_count must be >= 1")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.max_corner - self.min_corner))


def aabb_iou(amin, amax, bmin, bmax) -> float:
    """IoU of two axis-aligned boxes given as corner arrays.

    Zero-volume boxes give 0 unless the two boxes are identical (then 1).
    """
    amin = np.asarray(amin, dtype=np.float64)
    amax = np.asarray(amax, dtype=np.float64)
    bmin = np.asarray(bmin, dtype=np.float64)
    bmax = np.asarray(bmax, dtype=np.float64)
    if np.array_equal(amin, bmin) and np.array_equal(amax, bmax):
        return 1.0
    inter = np.minimum(amax, bmax) - np.maximum(amin, bmin)
    if (inter <= 0).any():
        return 0.0
    vol_i = float(np.prod(inter))
    vol_a = float(np.prod(amax - amin))
    vol_b = float(np.prod(bmax - bmin))
    union = vol_a + vol_b - vol_i
    if union <= 0.0:
        return 0.0
    return vol_i / union


def box_iou(a: Box3D, b: Box3D) -> float:
    return aabb_iou(a.min_corner, a.max_corner, b.min_corner, b.max_corner)


def instance_boxes(labels: LabelMatrix, cloud: PointCloud,
                   min_points: int = DEFAULT_MIN_POINTS,
                   exclude_classes=()) -> list[Box3D]:
    """One tight box per semantically labeled cluster, skipping excluded
    (background) classes and clusters below min_points."""
    if len(labels) != len(cloud):
        raise ValueError("labels and cloud lengths differ")
    excluded = set(int(c) for c in exclude_classes)
    boxes: list[Box3D] = []
    cid = labels.cluster_id
    sem = labels.semantic_label
    valid = (cid >= 0) & (sem >= 0)
    for instance in np.unique(cid[valid]):
        members = np.flatnonzero(cid == instance)
        cls = int(sem[members[0]])
        if cls < 0 or cls in excluded or len(members) < min_points:
            continue
        pts = cloud.points[members]
        boxes.append(Box3D(
            min_corner=pts.min(axis=0),
            max_corner=pts.max(axis=0),
            class_id=cls,
            instance_id=int(instance),
            point_count=len(members),
        ))
    return boxes


def scene_presence_target(source, num_classes: int) -> np.ndarray:
    """Per-class presence indicator: 1 iff at least one instance of that
    class exists. Accepts a list of Box3D or a LabelMatrix."""
    present = np.zeros(num_classes, dtype=np.int64)
    if isinstance(source, LabelMatrix):
        classes = source.semantic_label[source.semantic_label >= 0]
        present[np.unique(classes)] = 1
    else:
        for box in source:
            present[box.class_id] = 1
    return present


def export_boxes(boxes: list[Box3D], path) -> None:
    """JSON array ordered by instance_id; corners carry 6 decimals."""
    records = []
    for box in sorted(boxes, key=lambda b: b.instance_id):
        records.append({
            "instance_id": box.instance_id,
            "class_id": box.class_id,
            "min": [round(float(v), 6) for v in box.min_corner],
            "max": [round(float(v), 6) for v in box.max_corner],
            "points": box.point_count,
        })
    Path(path).write_text(json.dumps(records, indent=2) + "\n")


def load_boxes(path) -> list[Box3D]:
    records = json.loads(Path(path).read_text())
    return [
        Box3D(
            min_corner=np.asarray(r["min"], dtype=np.float64),
            max_corner=np.asarray(r["max"], dtype=np.float64),
            class_id=int(r["class_id"]),
            instance_id=int(r["instance_id"]),
            point_count=int(r["points"]),
        )
        for r in records
    ]
