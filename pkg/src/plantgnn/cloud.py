"""Point cloud containers, file formats and synthetic plant scenes.

Labels are fixed package-wide: soil=0, stem=1, leaf=2. Two file formats
are supported, a whitespace-separated ``x y z [label]`` text format with
``#`` comments, and ASCII PLY with optional per-vertex colour and label
properties.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

NUM_CLASSES = 3
SOIL, STEM, LEAF = 0, 1, 2
CLASS_NAMES = ("soil", "stem", "leaf")
CLASS_COLORS = {SOIL: (255, 0, 0), STEM: (0, 0, 255), LEAF: (0, 255, 0)}


@dataclass
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be (n, 3), got %s" % (self.points.shape,))

    def __len__(self):
        return self.points.shape[0]


@dataclass
class LabeledCloud(PointCloud):
    labels: np.ndarray

    def __post_init__(self):
        super().__post_init__()
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.points.shape[0],):
            raise ValueError("labels must be (n,) to match %d points" % len(self))
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise ValueError("labels must lie in [0, %d)" % NUM_CLASSES)


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def read_xyz(path):
    """Read ``x y z [label]`` text; returns LabeledCloud when a label
    column is present, PointCloud otherwise."""
    rows, labels = [], []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.split()
            if width is None:
                width = len(fields)
                if width not in (3, 4):
                    raise DataError("%s:%d: expected 3 or 4 columns, got %d"
                                    % (path, lineno, width))
            elif len(fields) != width:
                raise DataError("%s:%d: inconsistent column count" % (path, lineno))
            try:
                rows.append([float(v) for v in fields[:3]])
                if width == 4:
                    labels.append(int(fields[3]))
            except ValueError:
                raise DataError("%s:%d: unparseable field" % (path, lineno)) from None
    if not rows:
        raise DataError("%s: no points" % path)
    points = np.array(rows)
    if width == 3:
        return PointCloud(points)
    try:
        return LabeledCloud(points, np.array(labels))
    except ValueError as exc:
        raise DataError("%s: %s" % (path, exc)) from None


def write_xyz(path, cloud):
    labeled = isinstance(cloud, LabeledCloud)
    with open(path, "w") as f:
        for i, p in enumerate(cloud.points):
            line = "%.8g %.8g %.8g" % (p[0], p[1], p[2])
            if labeled:
                line += " %d" % cloud.labels[i]
            f.write(line + "\n")


_PLY_FLOAT = ("float", "float32", "double", "float64")
_PLY_UCHAR = ("uchar", "uint8")
_PLY_INT = ("int", "int32", "uchar", "uint8", "short", "int16")


def read_ply(path):
    """Read an ASCII PLY vertex cloud. Colour properties are skipped;
    a ``label`` property turns the result into a LabeledCloud."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataError("%s: not a PLY file" % path)
    n_vertex = None
    props = []
    in_vertex = False
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        fields = line.split()
        if not fields or fields[0] == "comment":
            continue
        if fields[0] == "format":
            if fields[1] != "ascii":
                raise DataError("%s: only ascii PLY is supported" % path)
        elif fields[0] == "element":
            if fields[1] == "vertex":
                n_vertex = int(fields[2])
                in_vertex = True
            else:
                if int(fields[2]) != 0:
                    raise DataError("%s: unsupported element %r" % (path, fields[1]))
                in_vertex = False
        elif fields[0] == "property":
            if in_vertex:
                props.append((fields[-1], fields[1]))
        elif fields[0] == "end_header":
            body_at = i + 1
            break
    if n_vertex is None or body_at is None:
        raise DataError("%s: malformed PLY header" % path)
    names = [name for name, _ in props]
    for need in ("x", "y", "z"):
        if need not in names:
            raise DataError("%s: missing vertex property %r" % (path, need))
    for name, typ in props:
        if name in ("x", "y", "z") and typ not in _PLY_FLOAT:
            raise DataError("%s: property %s must be float, is %s" % (path, name, typ))
        if name == "label" and typ not in _PLY_INT:
            raise DataError("%s: label property must be integer, is %s" % (path, typ))

    body = [ln.split() for ln in lines[body_at:] if ln.strip()]
    if len(body) < n_vertex:
        raise DataError("%s: expected %d vertex rows, found %d" % (path, n_vertex, len(body)))
    points = np.empty((n_vertex, 3))
    labels = np.empty(n_vertex, dtype=np.int64) if "label" in names else None
    col = {name: j for j, (name, _) in enumerate(props)}
    try:
        for r in range(n_vertex):
            row = body[r]
            if len(row) != len(props):
                raise DataError("%s: vertex row %d has %d fields, expected %d"
                                % (path, r, len(row), len(props)))
            points[r] = (float(row[col["x"]]), float(row[col["y"]]), float(row[col["z"]]))
            if labels is not None:
                labels[r] = int(row[col["label"]])
    except ValueError:
        raise DataError("%s: unparseable vertex row %d" % (path, r)) from None
    if labels is None:
        return PointCloud(points)
    try:
        return LabeledCloud(points, labels)
    except ValueError as exc:
        raise DataError("%s: %s" % (path, exc)) from None


def write_ply(path, cloud, colorize=True):
    """Write ASCII PLY; labeled clouds get class colours and a label
    property so the file opens meaningfully in standard viewers."""
    labeled = isinstance(cloud, LabeledCloud)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write("element vertex %d\n" % len(cloud))
        f.write("property float x\nproperty float y\nproperty float z\n")
        if labeled and colorize:
            f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        if labeled:
            f.write("property int label\n")
        f.write("end_header\n")
        for i, p in enumerate(cloud.points):
            line = "%.8g %.8g %.8g" % (p[0], p[1], p[2])
            if labeled:
                if colorize:
                    line += " %d %d %d" % CLASS_COLORS[int(cloud.labels[i])]
                line += " %d" % cloud.labels[i]
            f.write(line + "\n")


def normalize(points):
    """Center on the centroid and scale by the largest radius.

    Returns (normalized_points, centroid, scale); scale falls back to 1
    for degenerate clouds so the transform stays invertible.
    """
    points = np.asarray(points, dtype=np.float64)
    centroid = points.mean(axis=0)
    shifted = points - centroid
    scale = float(np.sqrt((shifted ** 2).sum(axis=1).max()))
    if scale == 0.0:
        scale = 1.0
    return shifted / scale, centroid, scale


def downsample(cloud, count, seed_or_rng):
    """Uniform subsample without replacement to exactly `count` points."""
    n = len(cloud)
    if not 0 < count <= n:
        raise ValueError("cannot sample %d points from a cloud of %d" % (count, n))
    idx = np.sort(_rng(seed_or_rng).choice(n, size=count, replace=False))
    if isinstance(cloud, LabeledCloud):
        return LabeledCloud(cloud.points[idx], cloud.labels[idx])
    return PointCloud(cloud.points[idx])


@dataclass
class AugmentParams:
    """Ranges for random cloud augmentation.

    translation_range and jitter_sigma are fractions of the bounding-box
    diameter of the input cloud.
    """
    rotation_range: tuple = (0.0, 2.0 * math.pi)
    scale_range: tuple = (0.9, 1.1)
    translation_range: float = 0.1
    jitter_sigma: float = 0.01


def augment(cloud, params, seed_or_rng):
    """Randomly transformed copy: rotate about z, then scale uniformly,
    then translate, then add Gaussian jitter."""
    rng = _rng(seed_or_rng)
    pts = cloud.points
    span = pts.max(axis=0) - pts.min(axis=0)
    diameter = float(np.sqrt((span ** 2).sum()))
    theta = rng.uniform(*params.rotation_range)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    out = pts @ rot.T
    out = out * rng.uniform(*params.scale_range)
    out = out + rng.uniform(-1.0, 1.0, size=3) * params.translation_range * diameter
    out = out + rng.normal(0.0, params.jitter_sigma * diameter, size=pts.shape)
    if isinstance(cloud, LabeledCloud):
        return LabeledCloud(out, cloud.labels.copy())
    return PointCloud(out)


def synth_cloud(n_points=1024, seed_or_rng=0, noise=0.01):
    """One synthetic potted-plant scene: a soil disk, a vertical stem and
    a handful of tilted leaf blades, with class mix roughly 50% soil,
    20% stem and 30% leaf."""
    if n_points < 16:
        raise ValueError("a synthetic cloud needs at least 16 points")
    rng = _rng(seed_or_rng)
    n_soil = int(round(0.5 * n_points))
    n_stem = int(round(0.2 * n_points))
    n_leaf = n_points - n_soil - n_stem

    # soil: unit disk at z ~ 0, with a hole where the stem enters the pot
    r = np.sqrt(rng.uniform(0.01, 1.0, n_soil))
    th = rng.uniform(0.0, 2.0 * math.pi, n_soil)
    soil = np.stack([r * np.cos(th), r * np.sin(th),
                     rng.normal(0.0, 0.005, n_soil)], axis=1)

    # stem: thin vertical cylinder, base held clear of the soil surface so
    # the two classes never interleave within the noise radius
    h = rng.uniform(0.05, 1.0, n_stem)
    th = rng.uniform(0.0, 2.0 * math.pi, n_stem)
    rad = 0.04 * (1.0 - 0.3 * h)
    stem = np.stack([rad * np.cos(th), rad * np.sin(th), h], axis=1)

    # leaves: planar elongated blades attached to the stem, tilted and
    # drooping towards the tip
    n_blades = int(rng.integers(4, 9))
    per = np.full(n_blades, n_leaf // n_blades)
    per[:n_leaf % n_blades] += 1
    blades = []
    for b in range(n_blades):
        m = int(per[b])
        if m == 0:
            continue
        azim = rng.uniform(0.0, 2.0 * math.pi)
        tilt = rng.uniform(math.radians(15), math.radians(60))
        attach_h = rng.uniform(0.25, 0.95)
        length = rng.uniform(0.35, 0.65)
        width = rng.uniform(0.08, 0.16)
        u = rng.uniform(0.0, 1.0, m)            # along the blade
        v = rng.uniform(-0.5, 0.5, m) * (1.0 - 0.6 * u)  # across, tapering
        axis = np.array([math.cos(azim) * math.cos(tilt),
                         math.sin(azim) * math.cos(tilt),
                         math.sin(tilt)])
        across = np.array([-math.sin(azim), math.cos(azim), 0.0])
        droop = -0.35 * length * u ** 2
        # blades stand off the stem by a short petiole so no leaf point
        # lands inside the stem cylinder
        base = 0.10 * np.array([math.cos(azim), math.sin(azim), 0.0])
        pts = (base + np.array([0.0, 0.0, attach_h])
               + u[:, None] * length * axis
               + v[:, None] * width * across)
        pts[:, 2] += droop
        blades.append(pts)
    leaf = np.concatenate(blades, axis=0)

    points = np.concatenate([soil, stem, leaf], axis=0)
    labels = np.concatenate([
        np.full(n_soil, SOIL), np.full(n_stem, STEM), np.full(len(leaf), LEAF),
    ]).astype(np.int64)
    points = points + rng.normal(0.0, noise, size=points.shape)
    perm = rng.permutation(len(points))
    return LabeledCloud(points[perm], labels[perm])


def synth_dataset(count, n_points=1024, seed=0, noise=0.01):
    """A list of independently drawn synthetic scenes."""
    if count <= 0:
        raise ValueError("count must be positive, got %d" % count)
    rng = np.random.default_rng(seed)
    return [synth_cloud(n_points, rng, noise) for _ in range(count)]
