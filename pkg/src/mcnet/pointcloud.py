"""Point cloud data model, ASCII PLY reading/writing and synthetic scenes."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, PLYParseError

GEOMETRIES = ("plane", "box", "cylinder", "scatter")
LABEL_PROPERTIES = ("label", "class", "scalar_label", "scalar_class")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An immutable labelled (or unlabelled) point cloud.

    Colors are kept normalized to [0, 1]; the 0-255 range only exists in files.
    """

    positions: np.ndarray
    colors: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int = 0

    def __post_init__(self):
        pos = _frozen(self.positions, np.float64)
        col = _frozen(self.colors, np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ContractError(f"positions must be [N,3] with N >= 1, got {list(pos.shape)}")
        if col.shape != pos.shape:
            raise ContractError(f"colors {list(col.shape)} do not match positions {list(pos.shape)}")
        if col.size and (col.min() < 0.0 or col.max() > 1.0):
            raise ContractError("colors must lie in [0, 1]")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        if self.labels is not None:
            lab = _frozen(self.labels, np.int64)
            if lab.shape != (pos.shape[0],):
                raise ContractError(f"labels {list(lab.shape)} do not match {pos.shape[0]} points")
            num_classes = self.num_classes or int(lab.max()) + 1
            if lab.min() < 0 or lab.max() >= num_classes:
                raise ContractError(f"labels must lie in [0, {num_classes})")
            object.__setattr__(self, "labels", lab)
            object.__setattr__(self, "num_classes", int(num_classes))

    def __len__(self):
        return self.positions.shape[0]

    @property
    def has_labels(self):
        return self.labels is not None

    def subset(self, ids):
        ids = np.asarray(ids)
        return PointCloud(
            self.positions[ids],
            self.colors[ids],
            None if self.labels is None else self.labels[ids],
            self.num_classes,
        )


def class_frequencies(cloud):
    """Fraction of points carrying each label, length ``num_classes``."""
    if cloud.labels is None:
        raise ContractError("class_frequencies needs a labelled cloud")
    counts = np.bincount(cloud.labels, minlength=cloud.num_classes).astype(np.float64)
    return counts / counts.sum()


# --------------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double",
    "int8", "uint8", "int16", "uint16", "int32", "uint32", "float32", "float64",
}


def _parse_header(lines):
    if not lines or lines[0].strip() != "ply":
        raise PLYParseError("file does not start with 'ply'", 1)
    elements = []
    fmt = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "format":
            if len(tokens) != 3:
                raise PLYParseError(f"malformed format line {raw.strip()!r}", lineno)
            fmt = tokens[1]
            if fmt != "ascii":
                raise PLYParseError(f"only ASCII PLY is supported, got {fmt!r}", lineno)
        elif key == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise PLYParseError(f"malformed element line {raw.strip()!r}", lineno)
            elements.append({"name": tokens[1], "count": int(tokens[2]), "props": []})
        elif key == "property":
            if not elements:
                raise PLYParseError("property declared before any element", lineno)
            if len(tokens) >= 2 and tokens[1] == "list":
                if len(tokens) != 5:
                    raise PLYParseError(f"malformed list property {raw.strip()!r}", lineno)
                elements[-1]["props"].append((tokens[4], "list"))
            elif len(tokens) == 3 and tokens[1] in _PLY_TYPES:
                elements[-1]["props"].append((tokens[2], tokens[1]))
            else:
                raise PLYParseError(f"malformed property line {raw.strip()!r}", lineno)
        elif key == "end_header":
            if fmt is None:
                raise PLYParseError("missing format line", lineno)
            return elements, lineno
        else:
            raise PLYParseError(f"unexpected header keyword {key!r}", lineno)
    raise PLYParseError("missing end_header", len(lines))


def load_ply(path, num_classes=None):
    """Read an ASCII PLY with x, y, z, red, green, blue and an optional label."""
    lines = Path(path).read_text().splitlines()
    elements, header_end = _parse_header(lines)
    body_line = header_end
    vertex = None
    for el in elements:
        if el["name"] == "vertex":
            vertex = el
            break
        body_line += el["count"]
    if vertex is None:
        raise FormatError("missing required element 'vertex'")
    names = [name for name, _ in vertex["props"]]
    for required in ("x", "y", "z", "red", "green", "blue"):
        if required not in names:
            raise FormatError(f"missing required property {required!r}")
    if any(kind == "list" for _, kind in vertex["props"]):
        raise FormatError("list properties on the vertex element are not supported")
    rows = lines[body_line: body_line + vertex["count"]]
    if len(rows) != vertex["count"]:
        raise PLYParseError(
            f"expected {vertex['count']} vertex rows, found {len(rows)}", body_line + len(rows)
        )
    table = np.empty((vertex["count"], len(names)))
    for r, row in enumerate(rows):
        tokens = row.split()
        if len(tokens) != len(names):
            raise PLYParseError(
                f"expected {len(names)} values, found {len(tokens)}", body_line + r + 1
            )
        try:
            table[r] = [float(t) for t in tokens]
        except ValueError as exc:
            raise PLYParseError(str(exc), body_line + r + 1) from None
    col = {name: table[:, i] for i, name in enumerate(names)}
    positions = np.stack([col["x"], col["y"], col["z"]], axis=1)
    colors = np.stack([col["red"], col["green"], col["blue"]], axis=1) / 255.0
    labels = None
    for name in LABEL_PROPERTIES:
        if name in col:
            labels = col[name].astype(np.int64)
            break
    return PointCloud(positions, colors, labels, num_classes or 0)


def load_predictions(path):
    """Read back the ``pred`` property written by :func:`save_ply`, or None."""
    lines = Path(path).read_text().splitlines()
    elements, header_end = _parse_header(lines)
    vertex = next(el for el in elements if el["name"] == "vertex")
    names = [name for name, _ in vertex["props"]]
    if "pred" not in names:
        return None
    j = names.index("pred")
    start = header_end + sum(
        el["count"] for el in elements[: elements.index(vertex)]
    )
    rows = lines[start: start + vertex["count"]]
    return np.array([int(float(row.split()[j])) for row in rows], dtype=np.int64)


def save_ply(cloud, path, predicted=None):
    """Write ``cloud`` as ASCII PLY; ``predicted`` becomes an extra ``pred`` property."""
    n = len(cloud)
    if predicted is not None and len(predicted) == 0:
        predicted = None
    if predicted is not None and len(predicted) != n:
        raise ContractError(f"{len(predicted)} predictions for {n} points")
    header = ["ply", "format ascii 1.0", f"element vertex {n}"]
    header += [f"property double {a}" for a in "xyz"]
    header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    if cloud.labels is not None:
        header.append("property int label")
    if predicted is not None:
        header.append("property int pred")
    header.append("end_header")
    rgb = np.rint(cloud.colors * 255.0).astype(np.int64)
    out = header
    for i in range(n):
        x, y, z = cloud.positions[i]
        fields = [repr(float(x)), repr(float(y)), repr(float(z))]
        fields += [str(v) for v in rgb[i]]
        if cloud.labels is not None:
            fields.append(str(int(cloud.labels[i])))
        if predicted is not None:
            fields.append(str(int(predicted[i])))
        out.append(" ".join(fields))
    Path(path).write_text("\n".join(out) + "\n")


# ------------------------------------------------------------ synthetic scenes


@dataclass
class ClassSpec:
    name: str
    point_count: int
    geometry: str = "scatter"
    color_mean: tuple = (0.5, 0.5, 0.5)
    color_jitter: float = 0.0
    noise_sigma: float = 0.0
    center: tuple = (0.0, 0.0, 0.0)
    size: tuple = (1.0, 1.0, 1.0)


@dataclass
class SceneSpec:
    classes: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.classes = [c if isinstance(c, ClassSpec) else ClassSpec(**c) for c in self.classes]

    def validate(self):
        if len(self.classes) < 2:
            raise ContractError("a scene needs at least 2 classes")
        for c in self.classes:
            if c.point_count < 1:
                raise ContractError(f"class {c.name!r} needs at least one point")
            if c.geometry not in GEOMETRIES:
                raise ContractError(f"class {c.name!r}: unknown geometry {c.geometry!r}")

    @classmethod
    def from_json(cls, path):
        doc = json.loads(Path(path).read_text())
        return cls(classes=doc["classes"], seed=doc.get("seed", 0))

    def to_dict(self):
        return {
            "classes": [
                {**c.__dict__, "color_mean": list(c.color_mean), "center": list(c.center),
                 "size": list(c.size)}
                for c in self.classes
            ],
            "seed": self.seed,
        }

    @property
    def names(self):
        return [c.name for c in self.classes]


def _sample_geometry(rng, c):
    n = c.point_count
    center = np.asarray(c.center, dtype=float)
    size = np.asarray(c.size, dtype=float)
    u = rng.random((n, 3))
    if c.geometry == "plane":
        pts = (u - 0.5) * size
        pts[:, 2] = 0.0
    elif c.geometry == "box":
        pts = (u - 0.5) * size
    elif c.geometry == "cylinder":
        theta = 2 * np.pi * u[:, 0]
        radius = size[0] / 2
        pts = np.stack(
            [radius * np.cos(theta), radius * np.sin(theta), (u[:, 2] - 0.5) * size[2]], axis=1
        )
    else:
        pts = rng.normal(size=(n, 3)) * size
    return pts + center


def synth_scene(spec):
    """Generate a labelled scene; a pure function of ``spec`` (seeded)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    positions, colors, labels = [], [], []
    for label, c in enumerate(spec.classes):
        pts = _sample_geometry(rng, c)
        if c.noise_sigma > 0:
            pts = pts + rng.normal(scale=c.noise_sigma, size=pts.shape)
        rgb = np.broadcast_to(np.asarray(c.color_mean, dtype=float), pts.shape).copy()
        if c.color_jitter > 0:
            rgb += rng.normal(scale=c.color_jitter, size=rgb.shape)
        positions.append(pts)
        colors.append(np.clip(rgb, 0.0, 1.0))
        labels.append(np.full(c.point_count, label))
    return PointCloud(
        np.concatenate(positions), np.concatenate(colors), np.concatenate(labels),
        len(spec.classes),
    )
