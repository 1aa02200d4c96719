"""Numba kernels for octree traversal.

The octree is stored flattened: per-node cube (center, half extent), eight
child slots (-1 = absent), and a contiguous [start, end) slice into the
reordered point array covering the node's whole subtree. Traversal applies
three prunes against the query ball (radius = current k-th best distance):

  1. skip octants that do not overlap the ball;
  2. stop the whole search once the ball lies inside a fully processed octant;
  3. bulk-scan an octant's subtree slice when the ball contains its cube.

Ties at equal distance are broken toward the lower point index.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _min_dist2(cx, cy, cz, h, qx, qy, qz):
    dx = abs(qx - cx) - h
    dy = abs(qy - cy) - h
    dz = abs(qz - cz) - h
    if dx < 0.0:
        dx = 0.0
    if dy < 0.0:
        dy = 0.0
    if dz < 0.0:
        dz = 0.0
    return dx * dx + dy * dy + dz * dz


@njit(cache=True, inline="always")
def _max_dist2(cx, cy, cz, h, qx, qy, qz):
    dx = abs(qx - cx) + h
    dy = abs(qy - cy) + h
    dz = abs(qz - cz) + h
    return dx * dx + dy * dy + dz * dz


@njit(cache=True)
def knn_kernel(centers, halves, children, is_leaf, starts, ends,
               sorted_pts, perm, qx, qy, qz, k, stack, out_idx, out_d2):
    """Single k-NN query; returns the number of neighbors found (= k unless
    the cloud is smaller). out_idx/out_d2 are filled ascending by
    (distance, index)."""
    count = 0
    worst = np.inf
    stack[0] = 0
    top = 1
    while top > 0:
        node = stack[top - 1]
        top -= 1
        cx = centers[node, 0]
        cy = centers[node, 1]
        cz = centers[node, 2]
        h = halves[node]
        if count == k and _min_dist2(cx, cy, cz, h, qx, qy, qz) > worst:
            continue  # criterion 1
        scan = is_leaf[node]
        if not scan and count == k:
            # criterion 3: ball swallows the cube, compare the whole slice
            if _max_dist2(cx, cy, cz, h, qx, qy, qz) <= worst:
                scan = True
        if scan:
            for i in range(starts[node], ends[node]):
                dx = sorted_pts[i, 0] - qx
                dy = sorted_pts[i, 1] - qy
                dz = sorted_pts[i, 2] - qz
                d2 = dx * dx + dy * dy + dz * dz
                pid = perm[i]
                if count < k or d2 < worst or (
                    d2 == worst and pid < out_idx[count - 1]
                ):
                    j = count if count < k else k - 1
                    while j > 0 and (
                        out_d2[j - 1] > d2
                        or (out_d2[j - 1] == d2 and out_idx[j - 1] > pid)
                    ):
                        out_d2[j] = out_d2[j - 1]
                        out_idx[j] = out_idx[j - 1]
                        j -= 1
                    out_d2[j] = d2
                    out_idx[j] = pid
                    if count < k:
                        count += 1
                    if count == k:
                        worst = out_d2[k - 1]
            # criterion 2: ball inside this fully scanned cube -> done
            if count == k:
                r = np.sqrt(worst)
                if (
                    abs(qx - cx) + r <= h
                    and abs(qy - cy) + r <= h
                    and abs(qz - cz) + r <= h
                ):
                    break
        else:
            # push children far-to-near so the nearest pops first
            dist = np.empty(8, dtype=np.float64)
            node_id = np.empty(8, dtype=np.int64)
            m = 0
            for c in range(8):
                ch = children[node, c]
                if ch == -1:
                    continue
                dist[m] = _min_dist2(
                    centers[ch, 0], centers[ch, 1], centers[ch, 2],
                    halves[ch], qx, qy, qz,
                )
                node_id[m] = ch
                m += 1
            for a in range(m):
                hi = a
                for b in range(a + 1, m):
                    if dist[b] > dist[hi]:
                        hi = b
                if hi != a:
                    dist[a], dist[hi] = dist[hi], dist[a]
                    node_id[a], node_id[hi] = node_id[hi], node_id[a]
                stack[top] = node_id[a]
                top += 1
    return count


@njit(cache=True)
def knn_batch_kernel(centers, halves, children, is_leaf, starts, ends,
                     sorted_pts, perm, queries, k, stack_size):
    nq = queries.shape[0]
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_d2 = np.empty((nq, k), dtype=np.float64)
    stack = np.empty(stack_size, dtype=np.int64)
    for i in range(nq):
        knn_kernel(centers, halves, children, is_leaf, starts, ends,
                   sorted_pts, perm, queries[i, 0], queries[i, 1],
                   queries[i, 2], k, stack, out_idx[i], out_d2[i])
    return out_idx, out_d2
