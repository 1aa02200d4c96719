"""Per-point normal and curvature estimation via neighborhood PCA.

For each point, the covariance of its k nearest neighbors (the point itself
included) is eigendecomposed. The normal is the eigenvector of the smallest
eigenvalue; curvature is the surface variation lam0 / (lam0 + lam1 + lam2),
optionally divided by the mean neighbor distance to give units of 1/m.
Points with fewer than three distinct neighbor positions are degenerate:
zero normal, +inf curvature, so they are never auto-selected as seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .octree import Octree, knn_batch

CURVATURE_MODES = ("surface-variation", "radius-normalized")
DEGENERATE_CURVATURE = np.inf

_EIGH_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class LocalGeometry:
    normals: np.ndarray      # (N, 3) unit vectors; zero rows = degenerate
    curvatures: np.ndarray   # (N,) >= 0; +inf = degenerate
    curvature_mode: str
    k_used: int

    def __len__(self) -> int:
        return len(self.curvatures)

    def is_degenerate(self) -> np.ndarray:
        return ~np.isfinite(self.curvatures)


def _distinct_neighbor_counts(neighbors: np.ndarray) -> np.ndarray:
    """Number of distinct coordinate triples per (N, k, 3) neighborhood."""
    n, k, _ = neighbors.shape
    rec = np.ascontiguousarray(neighbors).view(
        [("x", "f8"), ("y", "f8"), ("z", "f8")]
    ).reshape(n, k)
    rec = np.sort(rec, axis=1)
    return 1 + (rec[:, 1:] != rec[:, :-1]).sum(axis=1)


def _canonical_sign(normals: np.ndarray) -> np.ndarray:
    """Flip each normal so its largest-magnitude component is positive."""
    lead = np.argmax(np.abs(normals), axis=1)
    signs = np.sign(normals[np.arange(len(normals)), lead])
    signs[signs == 0] = 1.0
    return normals * signs[:, None]


def estimate_geometry(cloud: PointCloud, tree: Octree, k: int = 16,
                      mode: str = "radius-normalized") -> LocalGeometry:
    if k < 3:
        raise ValueError("neighborhood size k must be >= 3")
    if mode not in CURVATURE_MODES:
        raise ValueError(f"unknown curvature mode {mode!r}")
    points = cloud.points
    idx, d2 = knn_batch(tree, points, min(k, len(points)))
    neighbors = points[idx]                      # (N, k, 3)

    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / neighbors.shape[1]
    eigvals, eigvecs = np.linalg.eigh(cov)       # ascending eigenvalues

    normals = _canonical_sign(eigvecs[:, :, 0].copy())

    # Measure-zero eigen ties: prefer the lexicographically smaller of the
    # two candidate eigenvectors for reproducibility.
    spread = eigvals[:, 2] - eigvals[:, 0]
    tied = (eigvals[:, 1] - eigvals[:, 0]) <= _EIGH_TIE_RTOL * np.maximum(spread, 1e-300)
    for i in np.flatnonzero(tied):
        alt = _canonical_sign(eigvecs[i, :, 1][None, :])[0]
        if tuple(alt) < tuple(normals[i]):
            normals[i] = alt

    total = eigvals.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        curvature = np.where(total > 0, np.maximum(eigvals[:, 0], 0.0) / total, 0.0)

    if mode == "radius-normalized":
        dist = np.sqrt(np.maximum(d2, 0.0))
        pos = dist > 0
        counts = pos.sum(axis=1)
        sums = np.where(pos, dist, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_dist = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
            curvature = np.where(mean_dist > 0, curvature / mean_dist, DEGENERATE_CURVATURE)

    degenerate = _distinct_neighbor_counts(neighbors) < 3
    normals[degenerate] = 0.0
    curvature = np.where(degenerate, DEGENERATE_CURVATURE, curvature)
    return LocalGeometry(
        normals=normals, curvatures=curvature, curvature_mode=mode, k_used=k,
    )


def normal_angle(n1, n2) -> float:
    """Orientation-folded angle between two normals, degrees in [0, 90]."""
    a = np.asarray(n1, dtype=np.float64)
    b = np.asarray(n2, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("normal_angle requires non-zero vectors")
    cosine = abs(float(a @ b) / (na * nb))
    return math.degrees(math.acos(min(cosine, 1.0)))
