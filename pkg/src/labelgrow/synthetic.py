"""Deterministic synthetic scenes for tests, benchmarks, and demos.

All generators are seeded jittered grids on exact planes, so analytic
normals and curvatures are known (zero curvature on every face) and
ground-truth classes/instances come for free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, WeakLabels


def _plane_grid(origin, u_axis, v_axis, u_len, v_len, count, rng,
                jitter: float = 0.35) -> np.ndarray:
    """Roughly ``count`` points on a jittered grid spanning the rectangle
    origin + [0,u_len] x [0,v_len] along two unit axes (in-plane jitter only,
    the surface stays exact)."""
    aspect = u_len / v_len
    nu = max(2, int(round(math.sqrt(count * aspect))))
    nv = max(2, int(round(count / nu)))
    us = (np.arange(nu) + 0.5) / nu * u_len
    vs = (np.arange(nv) + 0.5) / nv * v_len
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    uu = uu + rng.uniform(-jitter, jitter, uu.shape) * (u_len / nu)
    vv = vv + rng.uniform(-jitter, jitter, vv.shape) * (v_len / nv)
    uu = np.clip(uu, 0.0, u_len).ravel()
    vv = np.clip(vv, 0.0, v_len).ravel()
    origin = np.asarray(origin, dtype=np.float64)
    u_axis = np.asarray(u_axis, dtype=np.float64)
    v_axis = np.asarray(v_axis, dtype=np.float64)
    return origin + uu[:, None] * u_axis + vv[:, None] * v_axis


def perpendicular_planes(n_points: int = 20_000, seed: int = 0,
                         edge_len: float = 1.0, depth_len: float = 4.0,
                         scene_id: str = "two-planes"):
    """Two perpendicular rectangles sharing an edge (a floor strip meeting a
    wall panel).

    Returns (cloud, plane_id) with plane 0 horizontal (normal +z) and
    plane 1 vertical (normal +y), meeting along y=depth_len, z=0. The shared
    edge is kept short relative to the plane depth so the crease band, where
    PCA neighborhoods mix the two orientations, stays a small fraction of
    the cloud.
    """
    rng = np.random.default_rng(seed)
    half = n_points // 2
    a = _plane_grid((0, 0, 0), (1, 0, 0), (0, 1, 0), edge_len, depth_len,
                    half, rng)
    b = _plane_grid((0, depth_len, 0), (1, 0, 0), (0, 0, 1), edge_len,
                    depth_len, n_points - half, rng)
    points = np.vstack([a, b])
    plane_id = np.concatenate([
        np.zeros(len(a), dtype=np.int64),
        np.ones(len(b), dtype=np.int64),
    ])
    return PointCloud(points=points, scene_id=scene_id), plane_id


def parallel_planes(n_points: int = 4_000, gap: float = 1.0, seed: int = 0,
                    scene_id: str = "parallel-planes"):
    """Two coplanar-normal planes separated by ``gap`` along z."""
    rng = np.random.default_rng(seed)
    half = n_points // 2
    a = _plane_grid((0, 0, 0), (1, 0, 0), (0, 1, 0), 1.0, 1.0, half, rng)
    b = _plane_grid((0, 0, gap), (1, 0, 0), (0, 1, 0), 1.0, 1.0, n_points - half, rng)
    points = np.vstack([a, b])
    plane_id = np.concatenate([
        np.zeros(len(a), dtype=np.int64),
        np.ones(len(b), dtype=np.int64),
    ])
    return PointCloud(points=points, scene_id=scene_id), plane_id


def tiled_plane(n_tiles_x: int = 2, n_tiles_y: int = 2, n_points: int = 2_000,
                gap: float = 0.02, seed: int = 0, scene_id: str = "tiles"):
    """One flat plane pre-split into rectangular tiles (over-segmentation
    stand-in). Returns (cloud, tile_id); tiles are separated by ``gap`` so
    their tight boxes are disjoint until inflated."""
    rng = np.random.default_rng(seed)
    per_tile = max(4, n_points // (n_tiles_x * n_tiles_y))
    tile_w = 1.0
    pts = []
    ids = []
    tile = 0
    for ix in range(n_tiles_x):
        for iy in range(n_tiles_y):
            origin = (ix * (tile_w + gap), iy * (tile_w + gap), 0.0)
            p = _plane_grid(origin, (1, 0, 0), (0, 1, 0), tile_w, tile_w,
                            per_tile, rng)
            pts.append(p)
            ids.append(np.full(len(p), tile, dtype=np.int64))
            tile += 1
    points = np.vstack(pts)
    colors = np.full_like(points, 0.6)
    return (
        PointCloud(points=points, colors=colors, scene_id=scene_id),
        np.concatenate(ids),
    )


ROOM_CLASS_NAMES = ("floor", "wall", "box")


@dataclass(frozen=True)
class RoomScene:
    cloud: PointCloud
    gt_class: np.ndarray     # (N,) in {0 floor, 1 wall, 2 box}
    gt_instance: np.ndarray  # (N,) instance ids
    num_classes: int = 3


def room_scene(n_points: int = 50_000, seed: int = 0,
               scene_id: str = "room") -> RoomScene:
    """A small room: floor, two walls, and two boxes resting on the floor.

    Every surface is an exact plane with a per-instance color, so expansion
    purity and pseudo-label quality are measurable against ground truth.
    """
    rng = np.random.default_rng(seed)
    # (origin, u axis, v axis, u_len, v_len, class, instance, color)
    faces = []

    def add_face(origin, u_axis, v_axis, u_len, v_len, cls, inst, color):
        faces.append((origin, u_axis, v_axis, u_len, v_len, cls, inst, color))

    add_face((0, 0, 0), (1, 0, 0), (0, 1, 0), 4.0, 4.0, 0, 0, (0.55, 0.55, 0.55))
    add_face((0, 0, 0), (0, 1, 0), (0, 0, 1), 4.0, 2.5, 1, 1, (0.85, 0.80, 0.65))
    add_face((0, 0, 0), (1, 0, 0), (0, 0, 1), 4.0, 2.5, 1, 2, (0.80, 0.76, 0.66))

    def add_box(x0, y0, w, d, h, inst, color):
        add_face((x0, y0, h), (1, 0, 0), (0, 1, 0), w, d, 2, inst, color)  # top
        add_face((x0, y0, 0), (1, 0, 0), (0, 0, 1), w, h, 2, inst, color)
        add_face((x0, y0 + d, 0), (1, 0, 0), (0, 0, 1), w, h, 2, inst, color)
        add_face((x0, y0, 0), (0, 1, 0), (0, 0, 1), d, h, 2, inst, color)
        add_face((x0 + w, y0, 0), (0, 1, 0), (0, 0, 1), d, h, 2, inst, color)

    add_box(1.2, 1.2, 0.6, 0.6, 0.6, 3, (0.70, 0.15, 0.15))
    add_box(2.6, 2.4, 0.8, 0.5, 0.5, 4, (0.15, 0.25, 0.70))

    areas = np.array([f[3] * f[4] for f in faces])
    counts = np.maximum(4, np.round(areas / areas.sum() * n_points).astype(int))

    pts, cols, cls_arr, inst_arr = [], [], [], []
    for (origin, u_axis, v_axis, u_len, v_len, cls, inst, color), cnt in zip(
        faces, counts
    ):
        p = _plane_grid(origin, u_axis, v_axis, u_len, v_len, int(cnt), rng)
        pts.append(p)
        cols.append(np.tile(np.asarray(color, dtype=np.float64), (len(p), 1)))
        cls_arr.append(np.full(len(p), cls, dtype=np.int64))
        inst_arr.append(np.full(len(p), inst, dtype=np.int64))

    cloud = PointCloud(
        points=np.vstack(pts), colors=np.vstack(cols), scene_id=scene_id,
    )
    return RoomScene(
        cloud=cloud,
        gt_class=np.concatenate(cls_arr),
        gt_instance=np.concatenate(inst_arr),
    )


def pick_weak_labels(gt_class: np.ndarray, gt_instance: np.ndarray,
                     n_labels: int = 20, seed: int = 0) -> WeakLabels:
    """Sample sparse annotations: one point per instance first (an annotator
    clicks each object once), the remainder uniform over the scene."""
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for inst in np.unique(gt_instance):
        members = np.flatnonzero(gt_instance == inst)
        chosen.append(int(rng.choice(members)))
    if len(chosen) > n_labels:
        chosen = chosen[:n_labels]
    pool = np.setdiff1d(np.arange(len(gt_class)), np.array(chosen))
    extra = rng.choice(pool, size=n_labels - len(chosen), replace=False)
    idx = np.sort(np.concatenate([np.array(chosen, dtype=np.int64),
                                  extra.astype(np.int64)]))
    return WeakLabels(
        point_index=idx,
        class_id=gt_class[idx],
        num_classes=int(gt_class.max()) + 1,
    )
