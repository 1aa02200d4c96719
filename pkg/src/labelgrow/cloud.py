"""Point cloud data model and on-disk formats.

Supported cloud formats: PLY (ascii / binary little-endian, vertex element
with float x/y/z and optional uchar red/green/blue), plain ``xyz`` and
``xyzrgb`` text. Colors are normalized to [0, 1] at load time regardless of
the source bit depth. Weak labels and per-point label matrices use small
line-oriented text formats documented on their loaders.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNASSIGNED = -1

CLOUD_FORMATS = ("ply-ascii", "ply-binary-le", "xyz", "xyzrgb")


class CloudFormatError(ValueError):
    """Malformed input file; message carries file path and line/byte offset."""


class LabelError(ValueError):
    """Invalid weak-label or label-matrix content."""


@dataclass(frozen=True)
class PointCloud:
    """Immutable point set with optional per-point color.

    points: (N, 3) float64 coordinates in meters.
    colors: (N, 3) float64 in [0, 1], or None.
    """

    points: np.ndarray
    colors: np.ndarray | None = None
    scene_id: str = ""

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            bad = int(np.argwhere(~np.isfinite(pts).all(axis=1))[0, 0])
            raise ValueError(f"non-finite coordinate at point {bad}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            col = np.ascontiguousarray(np.asarray(self.colors, dtype=np.float64))
            if col.shape != pts.shape:
                raise ValueError(
                    f"colors shape {col.shape} does not match points {pts.shape}"
                )
            col.setflags(write=False)
            object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class WeakLabels:
    """Sparse ground-truth point annotations (typically 20-200 per scene)."""

    point_index: np.ndarray
    class_id: np.ndarray
    num_classes: int

    def __post_init__(self):
        idx = np.asarray(self.point_index, dtype=np.int64)
        cls = np.asarray(self.class_id, dtype=np.int64)
        if idx.shape != cls.shape or idx.ndim != 1:
            raise LabelError("point_index and class_id must be 1-d and aligned")
        uniq, counts = np.unique(idx, return_counts=True)
        if (counts > 1).any():
            raise LabelError(f"duplicate point_index {uniq[counts > 1].tolist()}")
        if (idx < 0).any():
            raise LabelError("negative point_index")
        if (cls < 0).any() or (cls >= self.num_classes).any():
            bad = cls[(cls < 0) | (cls >= self.num_classes)][0]
            raise LabelError(f"class_id {bad} outside [0, {self.num_classes})")
        idx.setflags(write=False)
        cls.setflags(write=False)
        object.__setattr__(self, "point_index", idx)
        object.__setattr__(self, "class_id", cls)

    def __len__(self) -> int:
        return len(self.point_index)

    def validate_against(self, cloud: PointCloud) -> None:
        if len(self) == 0:
            raise LabelError("weak labels are empty")
        if int(self.point_index.max()) >= len(cloud):
            raise LabelError(
                f"point_index {int(self.point_index.max())} out of range for "
                f"{len(cloud)}-point cloud"
            )


@dataclass
class LabelMatrix:
    """Per-point cluster id and semantic pseudo label (-1 = unassigned).

    provenance holds the seed index that admitted each point; -1 for seeds
    and unassigned points. The admission_* arrays, when present, record the
    normal-angle and curvature gaps measured at admission time.
    """

    cluster_id: np.ndarray
    semantic_label: np.ndarray
    provenance: np.ndarray
    hit_iteration_cap: bool = False
    admission_angle_deg: np.ndarray | None = field(default=None, repr=False)
    admission_curvature_delta: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.cluster_id = np.asarray(self.cluster_id, dtype=np.int64)
        self.semantic_label = np.asarray(self.semantic_label, dtype=np.int64)
        self.provenance = np.asarray(self.provenance, dtype=np.int64)
        n = len(self.cluster_id)
        if len(self.semantic_label) != n or len(self.provenance) != n:
            raise LabelError("label arrays must have equal length")

    def __len__(self) -> int:
        return len(self.cluster_id)

    @classmethod
    def empty(cls, n: int) -> "LabelMatrix":
        return cls(
            cluster_id=np.full(n, UNASSIGNED, dtype=np.int64),
            semantic_label=np.full(n, UNASSIGNED, dtype=np.int64),
            provenance=np.full(n, UNASSIGNED, dtype=np.int64),
        )

    def check_invariants(self) -> None:
        if ((self.semantic_label >= 0) & (self.cluster_id < 0)).any():
            raise LabelError("semantically labeled point without a cluster")

    def coverage(self) -> float:
        """Fraction of points with a semantic pseudo label."""
        if len(self) == 0:
            return 0.0
        return float((self.semantic_label >= 0).mean())


# ---------------------------------------------------------------------------
# PLY parsing

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_COLOR_PROPS = ("red", "green", "blue")


def _parse_ply_header(raw: bytes, path):
    lines = []
    offset = 0
    while True:
        end = raw.find(b"\n", offset)
        if end < 0:
            raise CloudFormatError(f"{path}: no end_header found")
        line = raw[offset:end].decode("ascii", errors="replace").strip()
        offset = end + 1
        lines.append(line)
        if line == "end_header":
            break
        if offset > 65536:
            raise CloudFormatError(f"{path}: header exceeds 64 KiB")
    if not lines or lines[0] != "ply":
        raise CloudFormatError(f"{path}: missing 'ply' magic at byte 0")

    fmt = None
    vertex_count = None
    props: list[tuple[str, str]] = []  # (name, numpy dtype code)
    in_vertex = False
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise CloudFormatError(
                    f"{path}: line {ln}: unsupported format {line!r}"
                )
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise CloudFormatError(f"{path}: line {ln}: malformed element")
            if parts[1] == "vertex":
                vertex_count = int(parts[2])
                in_vertex = True
            else:
                if int(parts[2]) != 0:
                    raise CloudFormatError(
                        f"{path}: line {ln}: unsupported element '{parts[1]}' "
                        "(only vertex clouds are handled)"
                    )
                in_vertex = False
        elif parts[0] == "property":
            if not in_vertex:
                continue
            if parts[1] == "list":
                raise CloudFormatError(
                    f"{path}: line {ln}: list properties are not supported"
                )
            if len(parts) != 3 or parts[1] not in _PLY_DTYPES:
                raise CloudFormatError(
                    f"{path}: line {ln}: unsupported property {line!r}"
                )
            props.append((parts[2], _PLY_DTYPES[parts[1]]))
        elif parts[0] == "end_header":
            break
    if fmt is None or vertex_count is None:
        raise CloudFormatError(f"{path}: header lacks format or vertex element")
    names = [n for n, _ in props]
    for axis in "xyz":
        if axis not in names:
            raise CloudFormatError(f"{path}: vertex property '{axis}' missing")
        if dict(props)[axis] not in ("f4", "f8"):
            raise CloudFormatError(f"{path}: property '{axis}' must be float")
    n_color = sum(1 for c in _COLOR_PROPS if c in names)
    if n_color not in (0, 3):
        raise CloudFormatError(
            f"{path}: expected 0 or 3 color channels, found {n_color}"
        )
    if n_color == 3:
        for c in _COLOR_PROPS:
            if dict(props)[c] != "u1":
                raise CloudFormatError(f"{path}: color property '{c}' must be uchar")
    return fmt, vertex_count, props, offset


def _load_ply(path: Path, scene_id: str) -> PointCloud:
    raw = path.read_bytes()
    fmt, count, props, body_offset = _parse_ply_header(raw, path)
    names = [n for n, _ in props]
    has_color = "red" in names

    if fmt == "ascii":
        text = raw[body_offset:].decode("ascii", errors="replace")
        rows = text.splitlines()
        if len(rows) < count:
            raise CloudFormatError(
                f"{path}: expected {count} vertex lines, found {len(rows)}"
            )
        data = np.empty((count, len(props)), dtype=np.float64)
        header_lines = raw[:body_offset].count(b"\n")
        for i in range(count):
            parts = rows[i].split()
            if len(parts) != len(props):
                raise CloudFormatError(
                    f"{path}: line {header_lines + i + 1}: expected "
                    f"{len(props)} values, got {len(parts)}"
                )
            try:
                data[i] = [float(p) for p in parts]
            except ValueError:
                raise CloudFormatError(
                    f"{path}: line {header_lines + i + 1}: non-numeric value"
                ) from None
        cols = {n: data[:, j] for j, (n, _) in enumerate(props)}
    else:
        dtype = np.dtype([(n, "<" + code) for n, code in props])
        need = body_offset + count * dtype.itemsize
        if len(raw) < need:
            raise CloudFormatError(
                f"{path}: truncated at byte {len(raw)}, need {need}"
            )
        rec = np.frombuffer(raw, dtype=dtype, count=count, offset=body_offset)
        cols = {n: rec[n].astype(np.float64) for n, _ in props}

    pts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    if not np.isfinite(pts).all():
        bad = int(np.argwhere(~np.isfinite(pts).all(axis=1))[0, 0])
        raise CloudFormatError(f"{path}: non-finite coordinate at vertex {bad}")
    colors = None
    if has_color:
        colors = np.column_stack([cols[c] for c in _COLOR_PROPS]) / 255.0
    return PointCloud(points=pts, colors=colors, scene_id=scene_id)


def _load_xyz(path: Path, scene_id: str, with_color: bool) -> PointCloud:
    want = 6 if with_color else 3
    try:
        data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise CloudFormatError(f"{path}: {exc}") from None
    if data.size == 0:
        raise CloudFormatError(f"{path}: empty cloud file")
    if data.shape[1] != want:
        raise CloudFormatError(
            f"{path}: expected {want} columns, found {data.shape[1]}"
        )
    pts = data[:, :3]
    if not np.isfinite(pts).all():
        bad = int(np.argwhere(~np.isfinite(pts).all(axis=1))[0, 0])
        raise CloudFormatError(
            f"{path}: non-finite coordinate at line {bad + 1}"
        )
    colors = None
    if with_color:
        colors = data[:, 3:6]
        if not np.isfinite(colors).all():
            bad = int(np.argwhere(~np.isfinite(colors).all(axis=1))[0, 0])
            raise CloudFormatError(f"{path}: non-finite color at line {bad + 1}")
        if colors.max() > 1.0:  # byte-scaled file
            colors = colors / 255.0
        colors = np.clip(colors, 0.0, 1.0)
    return PointCloud(points=pts, colors=colors, scene_id=scene_id)


def load_cloud(path, format: str | None = None) -> PointCloud:
    """Load a point cloud; ``format`` defaults from the file suffix.

    Raises CloudFormatError with file and line/byte context on malformed
    input; point order is preserved from the file.
    """
    path = Path(path)
    if format is None:
        suffix = path.suffix.lower()
        if suffix == ".ply":
            format = "ply-binary-le" if _ply_is_binary(path) else "ply-ascii"
        elif suffix == ".xyz":
            format = "xyz"
        elif suffix == ".xyzrgb":
            format = "xyzrgb"
        else:
            raise CloudFormatError(f"{path}: cannot infer format from suffix")
    if format not in CLOUD_FORMATS:
        raise CloudFormatError(f"unknown cloud format {format!r}")
    scene_id = path.stem
    if format in ("ply-ascii", "ply-binary-le"):
        cloud = _load_ply(path, scene_id)
        return cloud
    return _load_xyz(path, scene_id, with_color=(format == "xyzrgb"))


def _ply_is_binary(path: Path) -> bool:
    with open(path, "rb") as fh:
        head = fh.read(4096)
    return b"binary_little_endian" in head


def write_cloud(cloud: PointCloud, path, format: str) -> None:
    """Write a cloud in any supported format (ascii floats use 6 decimals)."""
    path = Path(path)
    if format == "xyz":
        np.savetxt(path, cloud.points, fmt="%.6f")
    elif format == "xyzrgb":
        if cloud.colors is None:
            raise ValueError("cloud has no colors for xyzrgb output")
        np.savetxt(path, np.hstack([cloud.points, cloud.colors]), fmt="%.6f")
    elif format in ("ply-ascii", "ply-binary-le"):
        rgb = None
        if cloud.colors is not None:
            rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
        _write_ply(path, cloud.points, rgb, binary=(format == "ply-binary-le"))
    else:
        raise ValueError(f"unknown cloud format {format!r}")


def _write_ply(path: Path, points, rgb, binary: bool) -> None:
    n = len(points)
    header = ["ply"]
    header.append(
        "format binary_little_endian 1.0" if binary else "format ascii 1.0"
    )
    header.append(f"element vertex {n}")
    header += ["property float x", "property float y", "property float z"]
    if rgb is not None:
        header += [
            "property uchar red",
            "property uchar green",
            "property uchar blue",
        ]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            xyz = points.astype("<f4")
            if rgb is None:
                fh.write(xyz.tobytes())
            else:
                rec = np.empty(
                    n, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                              ("red", "u1"), ("green", "u1"), ("blue", "u1")]
                )
                rec["x"], rec["y"], rec["z"] = xyz[:, 0], xyz[:, 1], xyz[:, 2]
                rec["red"], rec["green"], rec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
                fh.write(rec.tobytes())
        else:
            for i in range(n):
                row = "%.6f %.6f %.6f" % tuple(points[i])
                if rgb is not None:
                    row += " %d %d %d" % tuple(rgb[i])
                fh.write((row + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# Weak labels and label matrices

def load_weak_labels(path) -> WeakLabels:
    """Parse the weak-label text format.

    Line 1: ``classes <C>``; every following non-empty line is
    ``point_index class_id``. Index range against the cloud is checked at
    attach time, not here.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    stripped = [(i + 1, ln.strip()) for i, ln in enumerate(lines) if ln.strip()]
    if not stripped:
        raise LabelError(f"{path}: empty weak-label file")
    ln, header = stripped[0]
    parts = header.split()
    if len(parts) != 2 or parts[0] != "classes":
        raise LabelError(f"{path}: line {ln}: expected 'classes <C>' header")
    try:
        num_classes = int(parts[1])
    except ValueError:
        raise LabelError(f"{path}: line {ln}: bad class count {parts[1]!r}") from None
    if num_classes <= 0:
        raise LabelError(f"{path}: line {ln}: class count must be positive")
    idx, cls = [], []
    seen: dict[int, int] = {}
    for ln, line in stripped[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise LabelError(f"{path}: line {ln}: expected 'point_index class_id'")
        try:
            p, c = int(parts[0]), int(parts[1])
        except ValueError:
            raise LabelError(f"{path}: line {ln}: non-integer value") from None
        if p in seen:
            raise LabelError(
                f"{path}: line {ln}: duplicate point_index {p} "
                f"(first at line {seen[p]})"
            )
        if p < 0:
            raise LabelError(f"{path}: line {ln}: negative point_index")
        if not 0 <= c < num_classes:
            raise LabelError(
                f"{path}: line {ln}: class_id {c} outside [0, {num_classes})"
            )
        seen[p] = ln
        idx.append(p)
        cls.append(c)
    return WeakLabels(
        point_index=np.array(idx, dtype=np.int64),
        class_id=np.array(cls, dtype=np.int64),
        num_classes=num_classes,
    )


def write_weak_labels(weak: WeakLabels, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"classes {weak.num_classes}\n")
        for p, c in zip(weak.point_index, weak.class_id):
            fh.write(f"{p} {c}\n")


def label_palette(semantic_label: int) -> tuple[int, int, int]:
    """Deterministic RGB for a semantic label; -1 maps to gray (128,128,128)."""
    if semantic_label < 0:
        return (128, 128, 128)
    hue = (semantic_label * 0.6180339887498949) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.75, 0.95)
    return (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))


def write_labeled_cloud(cloud: PointCloud, labels: LabelMatrix, path,
                        mode: str = "labels-text") -> None:
    """Write per-point labels.

    ``labels-text``: one ``cluster_id semantic_label`` pair per line, point
    order. ``colored-ply``: binary PLY colored by the semantic palette
    (unlabeled points gray).
    """
    if len(labels) != len(cloud):
        raise LabelError(
            f"labels length {len(labels)} does not match cloud {len(cloud)}"
        )
    path = Path(path)
    if mode == "labels-text":
        with open(path, "w") as fh:
            for c, s in zip(labels.cluster_id, labels.semantic_label):
                fh.write(f"{c} {s}\n")
    elif mode == "colored-ply":
        uniq = np.unique(labels.semantic_label)
        lut = {int(s): label_palette(int(s)) for s in uniq}
        rgb = np.array([lut[int(s)] for s in labels.semantic_label], dtype=np.uint8)
        _write_ply(path, cloud.points, rgb, binary=True)
    else:
        raise ValueError(f"unknown label output mode {mode!r}")


def load_labels(path, expected_len: int | None = None) -> LabelMatrix:
    """Reload a labels-text file written by write_labeled_cloud."""
    path = Path(path)
    try:
        data = np.loadtxt(path, dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise LabelError(f"{path}: {exc}") from None
    if data.size == 0:
        raise LabelError(f"{path}: empty labels file")
    if data.shape[1] != 2:
        raise LabelError(f"{path}: expected 2 columns, found {data.shape[1]}")
    if expected_len is not None and data.shape[0] != expected_len:
        raise LabelError(
            f"{path}: {data.shape[0]} rows for a {expected_len}-point cloud"
        )
    return LabelMatrix(
        cluster_id=data[:, 0],
        semantic_label=data[:, 1],
        provenance=np.full(data.shape[0], UNASSIGNED, dtype=np.int64),
    )


def load_point_classes(path, expected_len: int | None = None) -> np.ndarray:
    """Per-point class ids from a 1-column class file or 2-column labels-text."""
    path = Path(path)
    try:
        data = np.loadtxt(path, dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise LabelError(f"{path}: {exc}") from None
    if data.shape[1] == 2:
        classes = data[:, 1]
    elif data.shape[1] == 1:
        classes = data[:, 0]
    else:
        raise LabelError(f"{path}: expected 1 or 2 columns, found {data.shape[1]}")
    if expected_len is not None and len(classes) != expected_len:
        raise LabelError(
            f"{path}: {len(classes)} rows for a {expected_len}-point cloud"
        )
    return classes
