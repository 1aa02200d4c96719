"""Octree spatial index with ball-pruned KNN and radius queries.

Queries run through numba-compiled kernels (see _kernels). knn_debug is a
pure-Python twin of the same traversal that logs every pruning decision so
tests can replay criterion soundness and the monotone shrink of the query
ball.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .cloud import PointCloud

DEFAULT_LEAF_CAPACITY = 32
MIN_HALF_EXTENT = 1e-4  # split floor; guards duplicate-point recursion
BOUNDS_PADDING = 1e-6


@dataclass(frozen=True)
class NeighborList:
    """(point_index, squared_distance) pairs ascending by (distance, index)."""

    indices: np.ndarray
    sq_dists: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(zip(self.indices.tolist(), self.sq_dists.tolist()))


@dataclass(frozen=True)
class Octree:
    """Flattened octree over an immutable cloud.

    Node arrays are indexed by node id (0 = root). children rows hold eight
    child node ids (-1 = absent); starts/ends give each node's contiguous
    slice into the reordered point array, covering its entire subtree.
    """

    centers: np.ndarray
    halves: np.ndarray
    children: np.ndarray
    is_leaf: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    sorted_points: np.ndarray
    perm: np.ndarray
    leaf_capacity: int
    max_depth: int

    @property
    def num_nodes(self) -> int:
        return len(self.halves)

    @property
    def num_points(self) -> int:
        return len(self.perm)

    def leaf_point_indices(self, node: int) -> np.ndarray:
        """Original point indices stored in a leaf node."""
        if not self.is_leaf[node]:
            raise ValueError(f"node {node} is not a leaf")
        return self.perm[self.starts[node]:self.ends[node]]

    def _stack_size(self) -> int:
        return 8 * (self.max_depth + 2)


def build_octree(cloud, leaf_capacity: int = DEFAULT_LEAF_CAPACITY) -> Octree:
    """Build an octree; the root cube is the tight bounding cube padded by
    1e-6 m. Splitting stops at leaf_capacity points or the minimum cube size.
    """
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(points)
    if n == 0:
        raise ValueError("cannot index an empty cloud")
    if leaf_capacity < 1:
        raise ValueError("leaf_capacity must be positive")

    lo = points.min(axis=0)
    hi = points.max(axis=0)
    root_center = (lo + hi) / 2.0
    root_half = float((hi - lo).max()) / 2.0 + BOUNDS_PADDING

    centers: list[np.ndarray] = []
    halves: list[float] = []
    children: list[np.ndarray] = []
    starts: list[int] = []
    ends: list[int] = []
    perm = np.empty(n, dtype=np.int64)
    state = {"cursor": 0, "max_depth": 0}

    def _build(idx: np.ndarray, center: np.ndarray, half: float, depth: int) -> int:
        node = len(halves)
        centers.append(center)
        halves.append(half)
        children.append(np.full(8, -1, dtype=np.int64))
        starts.append(state["cursor"])
        ends.append(0)
        state["max_depth"] = max(state["max_depth"], depth)
        if len(idx) <= leaf_capacity or half / 2.0 < MIN_HALF_EXTENT:
            perm[state["cursor"]:state["cursor"] + len(idx)] = idx
            state["cursor"] += len(idx)
            ends[node] = state["cursor"]
            return node
        p = points[idx]
        octant = (
            (p[:, 0] >= center[0]).astype(np.int8) << 2
            | (p[:, 1] >= center[1]).astype(np.int8) << 1
            | (p[:, 2] >= center[2]).astype(np.int8)
        )
        quarter = half / 2.0
        for c in range(8):
            sub = idx[octant == c]
            if len(sub) == 0:
                continue
            offset = np.array([
                quarter if c & 4 else -quarter,
                quarter if c & 2 else -quarter,
                quarter if c & 1 else -quarter,
            ])
            children[node][c] = _build(sub, center + offset, quarter, depth + 1)
        ends[node] = state["cursor"]
        return node

    _build(np.arange(n, dtype=np.int64), root_center, root_half, 0)
    children_arr = np.stack(children)
    return Octree(
        centers=np.stack(centers),
        halves=np.asarray(halves, dtype=np.float64),
        children=children_arr,
        is_leaf=(children_arr == -1).all(axis=1),
        starts=np.asarray(starts, dtype=np.int64),
        ends=np.asarray(ends, dtype=np.int64),
        sorted_points=np.ascontiguousarray(points[perm]),
        perm=perm,
        leaf_capacity=leaf_capacity,
        max_depth=state["max_depth"],
    )


def _check_query(query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(3)
    if not np.isfinite(q).all():
        raise ValueError("query point must be finite")
    return q


def knn(tree: Octree, query, k: int) -> NeighborList:
    """Exactly the k nearest points to the query by Euclidean distance."""
    q = _check_query(query)
    if not 1 <= k <= tree.num_points:
        raise ValueError(f"k={k} outside [1, {tree.num_points}]")
    idx = np.empty(k, dtype=np.int64)
    d2 = np.empty(k, dtype=np.float64)
    stack = np.empty(tree._stack_size(), dtype=np.int64)
    _kernels.knn_kernel(
        tree.centers, tree.halves, tree.children, tree.is_leaf,
        tree.starts, tree.ends, tree.sorted_points, tree.perm,
        q[0], q[1], q[2], k, stack, idx, d2,
    )
    return NeighborList(indices=idx, sq_dists=d2)


def knn_batch(tree: Octree, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Vector form of knn: (Q, k) index and squared-distance arrays."""
    q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64))
    if q.ndim != 2 or q.shape[1] != 3:
        raise ValueError(f"queries must be (Q, 3), got {q.shape}")
    if not 1 <= k <= tree.num_points:
        raise ValueError(f"k={k} outside [1, {tree.num_points}]")
    return _kernels.knn_batch_kernel(
        tree.centers, tree.halves, tree.children, tree.is_leaf,
        tree.starts, tree.ends, tree.sorted_points, tree.perm,
        q, k, tree._stack_size(),
    )


def knn_debug(tree: Octree, query, k: int):
    """Instrumented Python twin of knn.

    Returns (NeighborList, events) where each event is a dict with keys
    action ('prune' | 'scan' | 'bulk' | 'descend' | 'stop'), node, and
    ball_r2 (the squared ball radius in force when the decision was made,
    inf until k candidates exist).
    """
    q = _check_query(query)
    if not 1 <= k <= tree.num_points:
        raise ValueError(f"k={k} outside [1, {tree.num_points}]")

    best: list[tuple[float, int]] = []  # sorted (d2, index), len <= k
    events: list[dict] = []

    def worst() -> float:
        return best[-1][0] if len(best) == k else np.inf

    def min_dist2(node: int) -> float:
        d = np.maximum(np.abs(q - tree.centers[node]) - tree.halves[node], 0.0)
        return float(d @ d)

    def max_dist2(node: int) -> float:
        d = np.abs(q - tree.centers[node]) + tree.halves[node]
        return float(d @ d)

    def ball_inside(node: int) -> bool:
        if len(best) < k:
            return False
        r = np.sqrt(best[-1][0])
        return bool(
            (np.abs(q - tree.centers[node]) + r <= tree.halves[node]).all()
        )

    def scan(node: int) -> None:
        for i in range(tree.starts[node], tree.ends[node]):
            delta = tree.sorted_points[i] - q
            d2 = float(delta @ delta)
            pid = int(tree.perm[i])
            if len(best) < k:
                best.append((d2, pid))
                best.sort()
            elif (d2, pid) < best[-1]:
                best[-1] = (d2, pid)
                best.sort()

    def visit(node: int) -> bool:
        """Returns True when the search is finished (criterion 2)."""
        if len(best) == k and min_dist2(node) > worst():
            events.append({"action": "prune", "node": node, "ball_r2": worst()})
            return False
        if tree.is_leaf[node]:
            events.append({"action": "scan", "node": node, "ball_r2": worst()})
            scan(node)
        elif len(best) == k and max_dist2(node) <= worst():
            events.append({"action": "bulk", "node": node, "ball_r2": worst()})
            scan(node)
        else:
            events.append({"action": "descend", "node": node, "ball_r2": worst()})
            kids = [c for c in tree.children[node] if c != -1]
            kids.sort(key=min_dist2)
            for child in kids:
                if visit(int(child)):
                    return True
        if ball_inside(node):
            events.append({"action": "stop", "node": node, "ball_r2": worst()})
            return True
        return False

    visit(0)
    arr = np.array(best, dtype=np.float64)
    return (
        NeighborList(indices=arr[:, 1].astype(np.int64), sq_dists=arr[:, 0]),
        events,
    )


def radius_search(tree: Octree, query, radius: float) -> NeighborList:
    """All points within ``radius`` of the query, ascending by distance."""
    q = _check_query(query)
    if radius <= 0:
        raise ValueError("radius must be positive")
    r2 = radius * radius
    hits_idx: list[np.ndarray] = []
    hits_d2: list[np.ndarray] = []

    def visit(node: int) -> None:
        d = np.maximum(np.abs(q - tree.centers[node]) - tree.halves[node], 0.0)
        if float(d @ d) > r2:
            return
        far = np.abs(q - tree.centers[node]) + tree.halves[node]
        if tree.is_leaf[node] or float(far @ far) <= r2:
            sl = slice(tree.starts[node], tree.ends[node])
            delta = tree.sorted_points[sl] - q
            d2 = np.einsum("ij,ij->i", delta, delta)
            keep = d2 <= r2
            hits_idx.append(tree.perm[sl][keep])
            hits_d2.append(d2[keep])
            return
        for child in tree.children[node]:
            if child != -1:
                visit(int(child))

    visit(0)
    if not hits_idx:
        empty = np.empty(0)
        return NeighborList(indices=empty.astype(np.int64), sq_dists=empty)
    idx = np.concatenate(hits_idx)
    d2 = np.concatenate(hits_d2)
    order = np.lexsort((idx, d2))
    return NeighborList(indices=idx[order], sq_dists=d2[order])


def brute_force_knn(points: np.ndarray, query, k: int) -> NeighborList:
    """Oracle: exhaustive k-NN with the same (distance, index) tie-break."""
    q = np.asarray(query, dtype=np.float64).reshape(3)
    d2 = ((points - q) ** 2).sum(axis=1)
    if k < len(d2):
        cand = np.argpartition(d2, k - 1)[:k]
    else:
        cand = np.arange(len(d2))
    order = np.lexsort((cand, d2[cand]))
    sel = cand[order]
    return NeighborList(indices=sel.astype(np.int64), sq_dists=d2[sel])


@dataclass(frozen=True)
class SpeedupReport:
    """Wall-time comparison of octree vs brute-force KNN on one query set."""

    n_points: int
    k: int
    n_queries: int
    octree_s: float
    brute_s: float
    verified: bool

    @property
    def ratio(self) -> float:
        return self.brute_s / self.octree_s if self.octree_s > 0 else float("inf")


def bench_knn(cloud, k: int, n_queries: int, seed: int = 0,
              leaf_capacity: int = DEFAULT_LEAF_CAPACITY) -> SpeedupReport:
    """Time octree KNN against the brute-force oracle on one random query
    set and verify both return identical (distance, index) results."""
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    rng = np.random.default_rng(seed)
    lo, hi = points.min(axis=0), points.max(axis=0)
    queries = rng.uniform(lo, hi, size=(n_queries, 3))

    tree = build_octree(points, leaf_capacity)
    knn_batch(tree, queries[:1], k)  # trigger JIT outside the timed region

    t0 = time.perf_counter()
    idx, d2 = knn_batch(tree, queries, k)
    octree_s = time.perf_counter() - t0

    brute_idx = np.empty_like(idx)
    brute_d2 = np.empty_like(d2)
    t0 = time.perf_counter()
    for i in range(n_queries):
        nb = brute_force_knn(points, queries[i], k)
        brute_idx[i] = nb.indices
        brute_d2[i] = nb.sq_dists
    brute_s = time.perf_counter() - t0

    verified = bool(
        np.array_equal(idx, brute_idx)
        and np.allclose(d2, brute_d2, rtol=1e-12, atol=0.0)
    )
    return SpeedupReport(
        n_points=len(points), k=k, n_queries=n_queries,
        octree_s=octree_s, brute_s=brute_s, verified=verified,
    )
