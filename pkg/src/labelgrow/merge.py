"""Iterative cluster merging driven by geometric and semantic similarity.

Each round walks the clusters seed-first (truly labeled clusters, then the
smallest), scores every seed against its nearest clusters by centroid, and
merges neighbors whose combined similarity clears the merge threshold; a
higher threshold additionally re-enqueues the merged cluster as a fresh
seed. The channel weights start fully on geometry (color, scale, box
overlap) and shift onto the semantic channel as rounds advance.

The semantic channel is supplied by a pluggable provider standing in for a
trained cluster classifier: per-cluster probability rows from a file, a
ground-truth oracle (tests), or a uniform stub.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cloud import UNASSIGNED, LabelMatrix, PointCloud, WeakLabels
from .detection import aabb_iou

logger = logging.getLogger(__name__)

SEG_CHANNELS = ("narrative", "paper")
DEFAULT_COND3 = 1.25
DEFAULT_COND4 = 1.5
DEFAULT_INFLATE = 0.05
DEFAULT_K_CLUSTERS = 8
DEFAULT_ROUNDS = 10


@dataclass(frozen=True)
class ClusterDescriptor:
    """Geometric and semantic summary of one cluster."""

    cluster_id: int
    point_indices: np.ndarray
    centroid: np.ndarray
    aabb_min: np.ndarray
    aabb_max: np.ndarray
    semantic_row: np.ndarray          # (C,) probability row
    mean_color: np.ndarray | None = None
    true_class_counts: np.ndarray | None = None  # (C,) weak labels inside

    def __post_init__(self):
        if len(self.point_indices) == 0:
            raise ValueError("cluster descriptor needs at least one point")
        row = np.asarray(self.semantic_row, dtype=np.float64)
        if abs(row.sum() - 1.0) > 1e-9 or (row < 0).any():
            raise ValueError(
                f"semantic_row of cluster {self.cluster_id} is not a "
                f"probability vector (sum={row.sum()})"
            )

    @property
    def point_count(self) -> int:
        return len(self.point_indices)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.aabb_max - self.aabb_min))

    @property
    def dominant_label(self) -> int:
        return int(np.argmax(self.semantic_row))

    @property
    def dominant_true_label(self) -> int:
        """Majority class of contained truly labeled points, -1 if none."""
        if self.true_class_counts is None or self.true_class_counts.sum() == 0:
            return UNASSIGNED
        return int(np.argmax(self.true_class_counts))


# ---------------------------------------------------------------------------
# Semantic providers

class SemanticProvider:
    """Source of per-cluster class-probability rows."""

    num_classes: int

    def refresh(self) -> None:
        """Called at the start of every merge round."""

    def row_for(self, descriptor: ClusterDescriptor) -> np.ndarray | None:
        """Fresh row for a cluster id, or None to keep the current row."""
        raise NotImplementedError


class UniformProvider(SemanticProvider):
    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self._row = np.full(num_classes, 1.0 / num_classes)

    def row_for(self, descriptor) -> np.ndarray:
        return self._row.copy()


class OracleProvider(SemanticProvider):
    """Ground-truth one-hot rows (test harness only): the majority true
    class of the cluster's points, ties to the lowest class id."""

    def __init__(self, gt_classes: np.ndarray, num_classes: int):
        self.gt = np.asarray(gt_classes, dtype=np.int64)
        self.num_classes = num_classes

    def row_for(self, descriptor) -> np.ndarray:
        classes = self.gt[descriptor.point_indices]
        classes = classes[classes >= 0]
        row = np.zeros(self.num_classes)
        if len(classes) == 0:
            row[:] = 1.0 / self.num_classes
            return row
        votes = np.bincount(classes, minlength=self.num_classes)
        row[int(votes.argmax())] = 1.0
        return row


class FileProvider(SemanticProvider):
    """Rows loaded from a text file, re-read every round.

    Format: header ``clusters <N> classes <C>``, then one line per cluster:
    ``cluster_id p_0 ... p_{C-1}``. Rows are normalized at load. Cluster ids
    absent from the file (e.g. newly merged ids) keep their averaged rows.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.rows: dict[int, np.ndarray] = {}
        self.num_classes = 0
        self.refresh()

    def refresh(self) -> None:
        lines = [ln.strip() for ln in self.path.read_text().splitlines()
                 if ln.strip()]
        if not lines:
            raise ValueError(f"{self.path}: empty provider file")
        head = lines[0].split()
        if len(head) != 4 or head[0] != "clusters" or head[2] != "classes":
            raise ValueError(
                f"{self.path}: expected 'clusters <N> classes <C>' header"
            )
        n, c = int(head[1]), int(head[3])
        rows: dict[int, np.ndarray] = {}
        for ln, line in enumerate(lines[1:], start=2):
            parts = line.split()
            if len(parts) != c + 1:
                raise ValueError(
                    f"{self.path}: line {ln}: expected cluster_id plus "
                    f"{c} scores"
                )
            cid = int(parts[0])
            row = np.array([float(p) for p in parts[1:]])
            if (row < 0).any() or row.sum() <= 0:
                raise ValueError(
                    f"{self.path}: line {ln}: scores must be non-negative "
                    "with a positive sum"
                )
            rows[cid] = row / row.sum()
        if len(rows) != n:
            raise ValueError(
                f"{self.path}: header says {n} clusters, found {len(rows)}"
            )
        self.rows = rows
        self.num_classes = c

    def row_for(self, descriptor) -> np.ndarray | None:
        row = self.rows.get(descriptor.cluster_id)
        return None if row is None else row.copy()


def write_provider_file(path, rows: dict[int, np.ndarray],
                        num_classes: int) -> None:
    with open(path, "w") as fh:
        fh.write(f"clusters {len(rows)} classes {num_classes}\n")
        for cid in sorted(rows):
            vals = " ".join(f"{v:.9g}" for v in rows[cid])
            fh.write(f"{cid} {vals}\n")


# ---------------------------------------------------------------------------
# Descriptor construction and similarity channels

def build_descriptors(labels: LabelMatrix, cloud: PointCloud,
                      provider: SemanticProvider,
                      weak: WeakLabels | None = None) -> list[ClusterDescriptor]:
    """One descriptor per live cluster id, ascending by id."""
    cid = labels.cluster_id
    live = np.unique(cid[cid >= 0])
    num_classes = provider.num_classes
    true_counts: dict[int, np.ndarray] = {}
    if weak is not None:
        for p, c in zip(weak.point_index.tolist(), weak.class_id.tolist()):
            cluster = int(cid[p])
            if cluster < 0:
                continue
            true_counts.setdefault(
                cluster, np.zeros(num_classes, dtype=np.int64)
            )[c] += 1

    out = []
    for cluster in live.tolist():
        members = np.flatnonzero(cid == cluster)
        pts = cloud.points[members]
        desc = ClusterDescriptor(
            cluster_id=int(cluster),
            point_indices=members,
            centroid=pts.mean(axis=0),
            aabb_min=pts.min(axis=0),
            aabb_max=pts.max(axis=0),
            semantic_row=np.full(num_classes, 1.0 / num_classes),
            mean_color=(None if cloud.colors is None
                        else cloud.colors[members].mean(axis=0)),
            true_class_counts=true_counts.get(
                int(cluster), np.zeros(num_classes, dtype=np.int64)
            ),
        )
        row = provider.row_for(desc)
        if row is not None:
            desc = replace(desc, semantic_row=row)
        out.append(desc)
    return out


def geometric_similarities(a: ClusterDescriptor, b: ClusterDescriptor,
                           inflate: float = DEFAULT_INFLATE):
    """(M_color, M_scale, M_iou), each in [0, 1].

    M_color is 0.5 (neutral) when either cluster lacks color; its weight is
    redistributed inside similarity() in that case. M_iou inflates both
    boxes by ``inflate`` on every face so adjacent-but-disjoint clusters can
    register positive overlap.
    """
    if a.mean_color is None or b.mean_color is None:
        m_color = 0.5
    else:
        m_color = 1.0 - float(np.linalg.norm(a.mean_color - b.mean_color)) / np.sqrt(3.0)
        m_color = min(max(m_color, 0.0), 1.0)

    da, db = a.diagonal, b.diagonal
    if da == 0.0 and db == 0.0:
        m_scale = 1.0
    else:
        m_scale = min(da, db) / max(da, db)

    m_iou = aabb_iou(
        a.aabb_min - inflate, a.aabb_max + inflate,
        b.aabb_min - inflate, b.aabb_max + inflate,
    )
    return m_color, m_scale, m_iou


def semantic_similarity(row_a: np.ndarray, row_b: np.ndarray) -> float:
    """Inverse-distance kernel 1 / (1 + ||a - b||), bounded in (0, 1]."""
    a = np.asarray(row_a, dtype=np.float64)
    b = np.asarray(row_b, dtype=np.float64)
    for name, row in (("a", a), ("b", b)):
        if abs(row.sum() - 1.0) > 1e-9 or (row < 0).any():
            raise ValueError(f"row {name} is not a probability vector")
    return 1.0 / (1.0 + float(np.linalg.norm(a - b)))


def schedule_weights(m_i: int, n_total: int):
    """Balancing weights (y1, y2, y3, y4) for merge round m_i of n_total:
    y1 = y2 = y3 = 1 - m_i/n_total decline while y4 = m_i/n_total rises."""
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    if not 0 <= m_i <= n_total:
        raise ValueError(f"round index {m_i} outside [0, {n_total}]")
    declining = 1.0 - m_i / n_total
    return (declining, declining, declining, m_i / n_total)


@dataclass(frozen=True)
class MergeSchedule:
    """Round position plus the channel assignment for the scheduled weights.

    ``narrative`` puts the rising weight y4 on the semantic channel (trust
    learned semantics more over time); ``paper`` puts it on box overlap.
    """

    n_total: int
    m_i: int = 0
    semantic_channel: str = "narrative"

    def __post_init__(self):
        if self.semantic_channel not in SEG_CHANNELS:
            raise ValueError(f"unknown semantic channel {self.semantic_channel!r}")
        schedule_weights(self.m_i, self.n_total)  # validates the pair

    @property
    def weights(self):
        return schedule_weights(self.m_i, self.n_total)

    def advanced(self, m_i: int) -> "MergeSchedule":
        return replace(self, m_i=m_i)


def similarity(a: ClusterDescriptor, b: ClusterDescriptor,
               schedule: MergeSchedule,
               inflate: float = DEFAULT_INFLATE) -> float:
    """Combined similarity score; symmetric and bounded by y1+y2+y3+y4."""
    m_color, m_scale, m_iou = geometric_similarities(a, b, inflate)
    m_seg = semantic_similarity(a.semantic_row, b.semantic_row)
    y1, y2, y3, y4 = schedule.weights
    if schedule.semantic_channel == "paper":
        m3, m4 = m_seg, m_iou
    else:
        m3, m4 = m_iou, m_seg
    if a.mean_color is None or b.mean_color is None:
        # color channel unavailable: spread its weight over the others so
        # the attainable maximum stays y1+y2+y3+y4
        extra = y1 / 3.0
        return (y2 + extra) * m_scale + (y3 + extra) * m3 + (y4 + extra) * m4
    return y1 * m_color + y2 * m_scale + y3 * m3 + y4 * m4


# ---------------------------------------------------------------------------
# Merge rounds

def _merge_pair(a: ClusterDescriptor, b: ClusterDescriptor) -> ClusterDescriptor:
    """Union descriptor keeping a's id; semantic rows combine point-count
    weighted and renormalized."""
    na, nb = a.point_count, b.point_count
    row = (na * a.semantic_row + nb * b.semantic_row) / (na + nb)
    row = row / row.sum()
    color = None
    if a.mean_color is not None and b.mean_color is not None:
        color = (na * a.mean_color + nb * b.mean_color) / (na + nb)
    counts = None
    if a.true_class_counts is not None or b.true_class_counts is not None:
        za = a.true_class_counts if a.true_class_counts is not None else 0
        zb = b.true_class_counts if b.true_class_counts is not None else 0
        counts = za + zb
    return ClusterDescriptor(
        cluster_id=a.cluster_id,
        point_indices=np.concatenate([a.point_indices, b.point_indices]),
        centroid=(na * a.centroid + nb * b.centroid) / (na + nb),
        aabb_min=np.minimum(a.aabb_min, b.aabb_min),
        aabb_max=np.maximum(a.aabb_max, b.aabb_max),
        semantic_row=row,
        mean_color=color,
        true_class_counts=counts,
    )


def merge_round(clusters: list[ClusterDescriptor], schedule: MergeSchedule,
                provider: SemanticProvider,
                k_clusters: int = DEFAULT_K_CLUSTERS,
                cond3: float = DEFAULT_COND3,
                cond4: float = DEFAULT_COND4,
                inflate: float = DEFAULT_INFLATE) -> list[ClusterDescriptor]:
    """One cluster-level expansion pass.

    Seeds run truly-labeled clusters first, then ascending point count. A
    neighbor scoring >= cond3 merges into the seed; >= cond4 additionally
    re-enqueues the merged cluster. Clusters whose contained true labels
    disagree are never merged.
    """
    if not cond4 >= cond3 > 0:
        raise ValueError("thresholds must satisfy cond4 >= cond3 > 0")
    if k_clusters < 1:
        raise ValueError("k_clusters must be >= 1")

    provider.refresh()
    live: dict[int, ClusterDescriptor] = {}
    for desc in clusters:
        row = provider.row_for(desc)
        live[desc.cluster_id] = (
            desc if row is None else replace(desc, semantic_row=row)
        )

    ids = sorted(live)
    positions = {cid: i for i, cid in enumerate(ids)}
    centroids = np.array([live[cid].centroid for cid in ids])
    alive = np.ones(len(ids), dtype=bool)

    labeled = [c for c in ids if live[c].dominant_true_label >= 0]
    rest = sorted(
        (c for c in ids if live[c].dominant_true_label < 0),
        key=lambda c: (live[c].point_count, c),
    )
    queue = deque(labeled + rest)

    while queue:
        cid = queue.popleft()
        if not alive[positions[cid]]:
            continue
        seed = live[cid]
        d2 = np.einsum(
            "ij,ij->i", centroids - seed.centroid, centroids - seed.centroid
        )
        d2[~alive] = np.inf
        d2[positions[cid]] = np.inf
        order = np.lexsort((ids, d2))
        neighbor_ids = [ids[i] for i in order[:k_clusters] if np.isfinite(d2[i])]

        for nid in neighbor_ids:
            if not alive[positions[nid]]:
                continue
            other = live[nid]
            a_cls, b_cls = seed.dominant_true_label, other.dominant_true_label
            if a_cls >= 0 and b_cls >= 0 and a_cls != b_cls:
                logger.debug(
                    "refusing cross-class merge %d (class %d) vs %d (class %d)",
                    cid, a_cls, nid, b_cls,
                )
                continue
            score = similarity(seed, other, schedule, inflate)
            if score >= cond3:
                seed = _merge_pair(seed, other)
                live[cid] = seed
                del live[nid]
                alive[positions[nid]] = False
                centroids[positions[cid]] = seed.centroid
                if score >= cond4:
                    queue.append(cid)

    return [live[c] for c in sorted(live)]


@dataclass(frozen=True)
class MergeConfig:
    rounds: int = DEFAULT_ROUNDS
    cond3: float = DEFAULT_COND3
    cond4: float = DEFAULT_COND4
    k_clusters: int = DEFAULT_K_CLUSTERS
    inflate: float = DEFAULT_INFLATE
    seg_channel: str = "narrative"

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.cond4 >= self.cond3 > 0:
            raise ValueError("need cond4 >= cond3 > 0")
        if self.k_clusters < 1:
            raise ValueError("k_clusters must be >= 1")
        if self.inflate < 0:
            raise ValueError("inflate must be >= 0")
        if self.seg_channel not in SEG_CHANNELS:
            raise ValueError(f"unknown seg_channel {self.seg_channel!r}")


def run_merging(labels: LabelMatrix, cloud: PointCloud,
                provider: SemanticProvider, config: MergeConfig,
                weak: WeakLabels | None = None) -> LabelMatrix:
    """Run the full merge schedule and write the result back to a label
    matrix: cluster ids from the surviving clusters, semantic labels from
    each cluster's dominant true label, true labels preserved verbatim."""
    descriptors = build_descriptors(labels, cloud, provider, weak)
    for m in range(config.rounds):
        schedule = MergeSchedule(
            n_total=config.rounds, m_i=m, semantic_channel=config.seg_channel,
        )
        descriptors = merge_round(
            descriptors, schedule, provider,
            k_clusters=config.k_clusters, cond3=config.cond3,
            cond4=config.cond4, inflate=config.inflate,
        )

    n = len(labels)
    cluster = np.full(n, UNASSIGNED, dtype=np.int64)
    semantic = np.full(n, UNASSIGNED, dtype=np.int64)
    for desc in descriptors:
        cluster[desc.point_indices] = desc.cluster_id
        winner = desc.dominant_true_label
        if winner >= 0:
            semantic[desc.point_indices] = winner
    if weak is not None:
        semantic[weak.point_index] = weak.class_id
    return LabelMatrix(
        cluster_id=cluster,
        semantic_label=semantic,
        provenance=labels.provenance.copy(),
        hit_iteration_cap=labels.hit_iteration_cap,
        admission_angle_deg=labels.admission_angle_deg,
        admission_curvature_delta=labels.admission_curvature_delta,
    )
