"""Seed selection and similar-region expansion.

Seeds are the truly labeled points plus the lowest-curvature fraction of the
cloud. Expansion pops one seed at a time, inspects its nearest unassigned
neighbors, and applies two admission tests: the folded normal angle must stay
within ``gamma`` (the neighbor then joins the seed's cluster), and the
curvature gap within ``sigma`` additionally promotes the neighbor to a seed.
A neighbor failing the angle test opens a new cluster and becomes a seed
itself.

Queue discipline: the active cluster's promotions are processed FIFO to
exhaustion before the next initial seed starts, and seeds minted by failed
angle tests wait until every initial seed has drained. Flat FIFO over all
initial seeds would let every low-curvature seed race its own cluster across
a surface, shredding each connected region into arbitrary patches; letting
minted seeds run early has the same effect, since their crease-noise normals
mint further clusters in cascade across clean surfaces.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .cloud import UNASSIGNED, LabelMatrix, PointCloud, WeakLabels
from .geometry import LocalGeometry
from .octree import Octree, knn

logger = logging.getLogger(__name__)

ORIGIN_TRUE_LABEL = "true-label"
ORIGIN_LOW_CURVATURE = "low-curvature"
ORIGIN_PROMOTED = "promoted"


@dataclass(frozen=True)
class ExpansionConfig:
    gamma: float = 2.2            # degrees, admission angle (Condition 1)
    sigma: float = 0.35           # curvature gap, promotion (Condition 2)
    k_expand: int = 16            # neighbors inspected per seed
    seed_fraction: float = 0.002  # lowest-curvature share taken as seeds
    max_iterations: int = 0       # 0 = 50 * N safety bound

    def __post_init__(self):
        if not 0.0 < self.gamma < 90.0:
            raise ValueError("gamma must be in (0, 90) degrees")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.k_expand < 1:
            raise ValueError("k_expand must be >= 1")
        if not 0.0 < self.seed_fraction <= 1.0:
            raise ValueError("seed_fraction must be in (0, 1]")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")

    def iteration_cap(self, n_points: int) -> int:
        return self.max_iterations if self.max_iterations > 0 else 50 * n_points


@dataclass
class SeedSet:
    """Ordered seed queue; truly labeled points first, then ascending
    curvature."""

    indices: np.ndarray
    origins: list[str] = field(repr=False)

    def __len__(self) -> int:
        return len(self.indices)


def select_seeds(geometry: LocalGeometry, weak: WeakLabels,
                 config: ExpansionConfig) -> SeedSet:
    n = len(geometry)
    true_idx = np.sort(np.asarray(weak.point_index, dtype=np.int64))
    want = math.ceil(config.seed_fraction * n)

    finite = np.isfinite(geometry.curvatures)
    candidates = np.flatnonzero(finite)
    order = np.lexsort((candidates, geometry.curvatures[candidates]))
    low_idx = candidates[order][:want]

    taken = set(true_idx.tolist())
    indices = list(true_idx.tolist())
    origins = [ORIGIN_TRUE_LABEL] * len(indices)
    for i in low_idx.tolist():
        if i in taken:
            continue
        indices.append(i)
        origins.append(ORIGIN_LOW_CURVATURE)
    return SeedSet(indices=np.array(indices, dtype=np.int64), origins=origins)


def expand_regions(cloud: PointCloud, tree: Octree, geometry: LocalGeometry,
                   seeds: SeedSet, config: ExpansionConfig) -> LabelMatrix:
    """Run the expansion worklist to convergence.

    Terminates when all points are labeled, no seeds remain, a full pass
    over the live queue changes nothing, or the iteration cap is hit (the
    last is flagged on the returned matrix). Unreached points stay -1.
    """
    n = len(cloud)
    points = cloud.points
    normals = geometry.normals
    curvatures = geometry.curvatures
    degenerate = geometry.is_degenerate()
    cos_gamma = math.cos(math.radians(config.gamma))

    cluster = np.full(n, UNASSIGNED, dtype=np.int64)
    provenance = np.full(n, UNASSIGNED, dtype=np.int64)
    adm_phi = np.full(n, np.nan)
    adm_dr = np.full(n, np.nan)

    initial = deque(seeds.indices.tolist())
    frontier: deque[int] = deque()
    deferred: deque[int] = deque()  # minted seeds run after initial drain
    live = len(initial)

    next_cluster = 0
    assigned = 0
    pops = 0
    since_change = 0
    cap = config.iteration_cap(n)
    hit_cap = False
    k_query = min(config.k_expand + 1, n)  # +1 so the seed itself is not counted

    while assigned < n:
        if frontier:
            s = frontier.popleft()
        elif initial:
            s = initial.popleft()
        elif deferred:
            s = deferred.popleft()
        else:
            break  # no seeds left
        live -= 1
        pops += 1
        if pops > cap:
            hit_cap = True
            logger.warning("expansion hit the iteration cap (%d pops)", cap)
            break

        changed = False
        if cluster[s] == UNASSIGNED:
            cluster[s] = next_cluster
            next_cluster += 1
            assigned += 1
            changed = True
        if degenerate[s]:
            # no usable normal: the seed keeps its cluster but cannot expand
            since_change = 0 if changed else since_change + 1
            continue
        seed_cluster = int(cluster[s])
        n_seed = normals[s]
        r_seed = curvatures[s]

        nb = knn(tree, points[s], k_query)
        nb_idx = nb.indices
        open_mask = (cluster[nb_idx] == UNASSIGNED) & ~degenerate[nb_idx] & (nb_idx != s)
        cand = nb_idx[open_mask]
        if len(cand) == 0:
            since_change = 0 if changed else since_change + 1
            if since_change > live > 0:
                break  # a full pass changed nothing
            continue

        cosines = np.abs(normals[cand] @ n_seed)
        delta_r = np.abs(curvatures[cand] - r_seed)
        pass_angle = cosines >= cos_gamma

        promoted: list[int] = []
        minted: list[int] = []
        for j, p in enumerate(cand.tolist()):
            if pass_angle[j]:  # Condition 1
                cluster[p] = seed_cluster
                provenance[p] = s
                adm_phi[p] = math.degrees(math.acos(min(cosines[j], 1.0)))
                adm_dr[p] = delta_r[j]
                if delta_r[j] <= config.sigma:  # Condition 2
                    promoted.append(p)
            else:
                cluster[p] = next_cluster
                next_cluster += 1
                minted.append(p)
            assigned += 1
        changed = True

        frontier.extend(promoted)
        deferred.extend(minted)
        live += len(promoted) + len(minted)

        since_change = 0 if changed else since_change + 1
        if since_change > live > 0:
            break

    labels = LabelMatrix(
        cluster_id=cluster,
        semantic_label=np.full(n, UNASSIGNED, dtype=np.int64),
        provenance=provenance,
        hit_iteration_cap=hit_cap,
        admission_angle_deg=adm_phi,
        admission_curvature_delta=adm_dr,
    )
    return labels


def attach_cluster_labels(labels: LabelMatrix, weak: WeakLabels) -> LabelMatrix:
    """Propagate each truly labeled point's class to its whole cluster.

    Clusters with conflicting true labels resolve by majority (ties to the
    lowest class id) and are logged; truly labeled points always keep their
    own class.
    """
    semantic = np.full(len(labels), UNASSIGNED, dtype=np.int64)
    cluster = labels.cluster_id

    by_cluster: dict[int, list[int]] = {}
    for p, c in zip(weak.point_index.tolist(), weak.class_id.tolist()):
        cid = int(cluster[p])
        if cid == UNASSIGNED:
            continue
        by_cluster.setdefault(cid, []).append(c)

    for cid, classes in by_cluster.items():
        votes = np.bincount(classes, minlength=weak.num_classes)
        winner = int(votes.argmax())  # argmax takes the lowest id on ties
        if (votes > 0).sum() > 1:
            logger.warning(
                "cluster %d carries true labels of classes %s; majority -> %d",
                cid, np.flatnonzero(votes).tolist(), winner,
            )
        semantic[cluster == cid] = winner

    semantic[weak.point_index] = weak.class_id  # never overwrite true labels
    return LabelMatrix(
        cluster_id=cluster.copy(),
        semantic_label=semantic,
        provenance=labels.provenance.copy(),
        hit_iteration_cap=labels.hit_iteration_cap,
        admission_angle_deg=labels.admission_angle_deg,
        admission_curvature_delta=labels.admission_curvature_delta,
    )
