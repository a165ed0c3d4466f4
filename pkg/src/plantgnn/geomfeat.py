"""Per-point geometric descriptors from local PCA.

Each point gets a 13-value row: position, oriented unit normal, and
seven eigenvalue shape scalars (curvature, linearity, planarity,
scattering, omnivariance, anisotropy, eigenentropy) computed from the
covariance of its k nearest neighbours. Eigenvalues are taken in
ascending order; the normal is the eigenvector of the smallest one.
"""

from dataclasses import dataclass

import numpy as np

from .graph import knn_indices

FEATURE_NAMES = (
    "x", "y", "z",
    "nx", "ny", "nz",
    "curvature", "linearity", "planarity", "scattering",
    "omnivariance", "anisotropy", "eigenentropy",
)

FEATURE_SETS = {
    "XYZ": tuple(range(3)),
    "XYZ-N": tuple(range(6)),
    "XYZ-NC": tuple(range(7)),
    "XYZ-NCLPSOAE": tuple(range(13)),
}

DEGENERATE_EIGENSUM = 1e-12  # of squared cloud diameter


@dataclass
class EigenTriple:
    """Eigenvalues (ascending) and matching unit eigenvector columns."""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass
class PointDescriptor:
    xyz: np.ndarray
    normal: np.ndarray
    curvature: float
    linearity: float
    planarity: float
    scattering: float
    omnivariance: float
    anisotropy: float
    eigenentropy: float

    def vector(self):
        return np.concatenate([
            self.xyz, self.normal,
            [self.curvature, self.linearity, self.planarity, self.scattering,
             self.omnivariance, self.anisotropy, self.eigenentropy],
        ])


def cloud_diameter(points):
    """Diagonal of the axis-aligned bounding box (degeneracy scale)."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] == 0:
        return 0.0
    span = points.max(axis=0) - points.min(axis=0)
    return float(np.sqrt((span ** 2).sum()))


def neighborhood_covariance(points, index, k):
    """Mean-centered covariance (divisor k) of the k nearest neighbours
    of point `index`, the point itself excluded."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 3:
        raise ValueError("covariance needs k >= 3 neighbours, got %d" % k)
    if not 0 <= index < n:
        raise ValueError("point index %d out of range" % index)
    if k >= n:
        raise ValueError("k=%d requires more than %d points" % (k, n))
    d2 = ((points - points[index]) ** 2).sum(axis=1)
    d2[index] = np.inf
    nbr = np.argsort(d2, kind="stable")[:k]
    centered = points[nbr] - points[nbr].mean(axis=0)
    return centered.T @ centered / k


def eigen3(matrix):
    """Eigendecomposition of a symmetric 3x3 matrix, ascending order."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError("expected a 3x3 matrix, got %s" % (m.shape,))
    if np.abs(m - m.T).max() > 1e-9:
        raise ValueError("matrix is not symmetric within 1e-9")
    evals, evecs = np.linalg.eigh(m)
    return EigenTriple(evals, evecs)


def _orient(normals):
    """Flip normals so nz >= 0, ties broken on ny then nx."""
    nx, ny, nz = normals[:, 0], normals[:, 1], normals[:, 2]
    flip = (nz < 0) \
        | ((nz == 0) & (ny < 0)) \
        | ((nz == 0) & (ny == 0) & (nx < 0))
    out = normals.copy()
    out[flip] *= -1.0
    return out


def _shape_scalars(evals):
    """The seven eigenvalue scalars for (n, 3) ascending eigenvalues.

    Rows whose eigenvalue sum vanishes are left at zero; callers mask
    degenerate rows themselves.
    """
    lam = np.maximum(np.asarray(evals, dtype=np.float64), 0.0)
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    total = lam.sum(axis=1)
    ok = total > 0
    out = np.zeros((lam.shape[0], 7))
    t = np.where(ok, total, 1.0)
    big = np.where(l2 > 0, l2, 1.0)
    out[:, 0] = np.where(ok, l0 / t, 0.0)                 # curvature
    out[:, 1] = np.where(ok, (l2 - l1) / big, 0.0)        # linearity
    out[:, 2] = np.where(ok, (l1 - l0) / big, 0.0)        # planarity
    out[:, 3] = np.where(ok, l0 / big, 0.0)               # scattering
    out[:, 4] = np.where(ok, np.cbrt(l0 * l1 * l2), 0.0)  # omnivariance
    out[:, 5] = np.where(ok, (l2 - l0) / big, 0.0)        # anisotropy
    ratios = lam / t[:, None]
    terms = np.where(ratios > 0, ratios * np.log(np.where(ratios > 0, ratios, 1.0)), 0.0)
    out[:, 6] = np.where(ok, -terms.sum(axis=1), 0.0)     # eigenentropy
    return out


def point_descriptor(xyz, triple, diameter=1.0):
    """Descriptor for one point from its eigen triple.

    A neighbourhood whose eigenvalue sum is below DEGENERATE_EIGENSUM
    times the squared diameter gets zero scalars and the +z normal.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    lam = triple.eigenvalues
    if lam.sum() < DEGENERATE_EIGENSUM * diameter * diameter:
        return PointDescriptor(xyz, np.array([0.0, 0.0, 1.0]), *([0.0] * 7))
    normal = _orient(triple.eigenvectors[:, 0].reshape(1, 3))[0]
    scalars = _shape_scalars(lam.reshape(1, 3))[0]
    return PointDescriptor(xyz, normal, *scalars.tolist())


def featurize(points, k_features=16):
    """13-column descriptor matrix for a whole cloud (float64).

    Equivalent to running neighborhood_covariance / eigen3 /
    point_descriptor per point, but batched.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (n, 3), got %s" % (pts.shape,))
    if k_features < 3:
        raise ValueError("k_features must be >= 3, got %d" % k_features)
    n = pts.shape[0]
    if n <= k_features:
        raise ValueError("need more than %d points for k=%d" % (k_features, k_features))
    nbr = knn_indices(pts, k_features)
    gathered = pts[nbr]
    centered = gathered - gathered.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k_features
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, 0.0)

    diameter = cloud_diameter(pts)
    degenerate = evals.sum(axis=1) < DEGENERATE_EIGENSUM * diameter * diameter

    normals = _orient(evecs[:, :, 0])
    normals[degenerate] = (0.0, 0.0, 1.0)
    scalars = _shape_scalars(evals)
    scalars[degenerate] = 0.0
    return np.concatenate([pts, normals, scalars], axis=1)


def select_features(features, feature_set):
    """Column subset of a 13-wide feature matrix for a named set."""
    if feature_set not in FEATURE_SETS:
        raise ValueError("unknown feature set %r (choose from %s)"
                         % (feature_set, ", ".join(sorted(FEATURE_SETS))))
    return features[:, FEATURE_SETS[feature_set]]


def feature_width(feature_set):
    if feature_set not in FEATURE_SETS:
        raise ValueError("unknown feature set %r (choose from %s)"
                         % (feature_set, ", ".join(sorted(FEATURE_SETS))))
    return len(FEATURE_SETS[feature_set])


_CSV_WIDTHS = {len(cols) for cols in FEATURE_SETS.values()}


def write_feature_csv(path, features, labels=None):
    """Write a descriptor matrix as CSV with named columns; an optional
    integer label column comes last. Width must match one of the named
    feature sets (3, 6, 7 or 13 columns)."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] not in _CSV_WIDTHS:
        raise ValueError("expected %s feature columns, got %s"
                         % (sorted(_CSV_WIDTHS), (features.shape,)))
    header = ",".join(FEATURE_NAMES[:features.shape[1]])
    with open(path, "w") as f:
        if labels is None:
            f.write(header + "\n")
            for row in features:
                f.write(",".join("%.10g" % v for v in row) + "\n")
        else:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape[0] != features.shape[0]:
                raise ValueError("label count does not match feature rows")
            f.write(header + ",label\n")
            for row, lab in zip(features, labels):
                f.write(",".join("%.10g" % v for v in row) + ",%d\n" % lab)


def read_feature_csv(path):
    """Read a CSV written by write_feature_csv; returns (features, labels
    or None)."""
    from .errors import DataError
    with open(path) as f:
        header = f.readline().strip().split(",")
        has_labels = header[-1:] == ["label"]
        width = len(header) - (1 if has_labels else 0)
        if width not in _CSV_WIDTHS or header[:width] != list(FEATURE_NAMES[:width]):
            raise DataError("unexpected feature CSV header in %s" % path)
        rows = []
        for lineno, text in enumerate(f, start=2):
            text = text.strip()
            if not text:
                continue
            vals = text.split(",")
            if len(vals) != len(header):
                raise DataError("%s:%d: expected %d fields, got %d"
                                % (path, lineno, len(header), len(vals)))
            try:
                rows.append([float(v) for v in vals])
            except ValueError:
                raise DataError("%s:%d: non-numeric field" % (path, lineno)) from None
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    if has_labels:
        return data[:, :-1], data[:, -1].astype(np.int64)
    return data, None
