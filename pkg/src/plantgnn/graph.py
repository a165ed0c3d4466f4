"""K-nearest-neighbour graphs over point clouds.

Neighbour search is exact: distances are compared as (squared distance,
index) pairs so ties always resolve to the lower index, and the kd-tree
path reproduces the brute-force ordering bit for bit. Graphs are stored
as directed edge lists that are closed under reversal, which lets every
layer treat them as undirected while aggregating per destination.
"""

import heapq

import numpy as np

from . import tensor as T
from .errors import DataError

DENSE_LIMIT = 4096  # brute-force matrix path below this size, kd-tree above


class GraphTopology:
    """One graph, or a disjoint union of graphs, as an edge list.

    edge_index is (2, E) int64 with rows (source, destination); the edge
    set contains no self-edges and is closed under reversal. batch_vector
    maps each vertex to the graph it came from.
    """

    def __init__(self, num_vertices, edge_index, batch_vector=None):
        self.num_vertices = int(num_vertices)
        edge_index = np.asarray(edge_index, dtype=np.int64)
        if edge_index.ndim != 2 or edge_index.shape[0] != 2:
            raise ValueError("edge_index must be (2, E), got %s" % (edge_index.shape,))
        self.edge_index = edge_index
        if batch_vector is None:
            batch_vector = np.zeros(self.num_vertices, dtype=np.int64)
        self.batch_vector = np.asarray(batch_vector, dtype=np.int64)
        if self.batch_vector.shape != (self.num_vertices,):
            raise ValueError("batch_vector must have one entry per vertex")
        self._segments = None
        self._loops = None

    @property
    def src(self):
        return self.edge_index[0]

    @property
    def dst(self):
        return self.edge_index[1]

    @property
    def num_edges(self):
        return self.edge_index.shape[1]

    @property
    def num_graphs(self):
        return int(self.batch_vector.max()) + 1 if self.num_vertices else 0

    def segments(self):
        """SegmentIndex pair (by source, by destination), cached."""
        if self._segments is None:
            self._segments = (T.SegmentIndex(self.src, self.num_vertices),
                              T.SegmentIndex(self.dst, self.num_vertices))
        return self._segments

    def with_self_loops(self):
        """Edge arrays with one self-loop per vertex appended, plus their
        segment indexes. Used by attention layers."""
        if self._loops is None:
            loop = np.arange(self.num_vertices, dtype=np.int64)
            src = np.concatenate([self.src, loop])
            dst = np.concatenate([self.dst, loop])
            self._loops = (src, dst,
                           T.SegmentIndex(src, self.num_vertices),
                           T.SegmentIndex(dst, self.num_vertices))
        return self._loops

    def validate(self):
        """Check the structural invariants; raises DataError on violation."""
        src, dst = self.src, self.dst
        if self.num_edges:
            if src.min() < 0 or dst.min() < 0 \
                    or src.max() >= self.num_vertices or dst.max() >= self.num_vertices:
                raise DataError("edge endpoint out of vertex range")
        if np.any(src == dst):
            raise DataError("self-edges are not allowed")
        keys = src * self.num_vertices + dst
        if np.unique(keys).size != keys.size:
            raise DataError("duplicate edges")
        rev = dst * self.num_vertices + src
        if not np.array_equal(np.sort(keys), np.sort(rev)):
            raise DataError("edge set is not closed under reversal")
        if np.any(self.batch_vector[src] != self.batch_vector[dst]):
            raise DataError("edge crosses graph boundary in a batch")
        if self.num_vertices:
            d = np.diff(self.batch_vector)
            if np.any(d < 0) or np.any(d > 1) or self.batch_vector[0] != 0:
                raise DataError("batch_vector must be contiguous runs 0..G-1")
        return self


def _knn_dense(points, k):
    n, _ = points.shape
    out = np.empty((n, k), dtype=np.int64)
    chunk = max(1, (1 << 22) // n)
    for s in range(0, n, chunk):
        block = points[s:s + chunk]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
        d2[np.arange(block.shape[0]), s + np.arange(block.shape[0])] = np.inf
        # stable argsort: equal distances keep ascending index order
        out[s:s + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


class _KDTree:
    """Exact 3-d kd-tree returning neighbours in (distance, index) order."""

    LEAF = 24

    def __init__(self, points):
        self.points = points
        n = points.shape[0]
        self.order = np.arange(n, dtype=np.int64)
        # flat node arrays; axis == -1 marks a leaf over order[start:end]
        self.axis, self.split = [], []
        self.left, self.right = [], []
        self.start, self.end = [], []
        self._build(0, n)

    def _new_node(self):
        for arr in (self.axis, self.split, self.left, self.right, self.start, self.end):
            arr.append(-1)
        return len(self.axis) - 1

    def _build(self, lo, hi):
        node = self._new_node()
        self.start[node], self.end[node] = lo, hi
        if hi - lo <= self.LEAF:
            return node
        seg = self.order[lo:hi]
        pts = self.points[seg]
        axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        mid = (hi - lo) // 2
        part = np.argpartition(pts[:, axis], mid)
        self.order[lo:hi] = seg[part]
        self.axis[node] = axis
        self.split[node] = float(self.points[self.order[lo + mid], axis])
        self.left[node] = self._build(lo, lo + mid)
        self.right[node] = self._build(lo + mid, hi)
        return node

    def query(self, q, k, skip):
        """k nearest to q excluding index `skip`, sorted by (d2, index)."""
        # heap of (-d2, -idx): the root is the current worst candidate
        heap = []

        def visit(node):
            if self.axis[node] == -1:
                seg = self.order[self.start[node]:self.end[node]]
                d2s = ((self.points[seg] - q) ** 2).sum(axis=1)
                for j, d2 in zip(seg, d2s):
                    if j == skip:
                        continue
                    if len(heap) < k:
                        heapq.heappush(heap, (-d2, -j))
                    elif (d2, j) < (-heap[0][0], -heap[0][1]):
                        heapq.heapreplace(heap, (-d2, -j))
                return
            axis, split = self.axis[node], self.split[node]
            delta = q[axis] - split
            near, far = (self.right[node], self.left[node]) if delta >= 0 \
                else (self.left[node], self.right[node])
            visit(near)
            # the far side may hold equal-distance, lower-index points, so
            # prune only on strictly larger plane distance
            if len(heap) < k or delta * delta <= -heap[0][0]:
                visit(far)

        visit(0)
        out = sorted((-d2, -j) for d2, j in heap)
        return np.array([j for _, j in out], dtype=np.int64)


def knn_indices(points, k, algorithm="auto"):
    """Indices of the k nearest neighbours of every point (self excluded).

    Returns (n, k) int64, each row ordered by ascending (squared
    Euclidean distance, index). Exact for both backends.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be (n, d), got %s" % (points.shape,))
    n, d = points.shape
    if not 0 < k < n:
        raise ValueError("k must be in [1, %d), got %d" % (n, k))
    if algorithm == "auto":
        algorithm = "dense" if (n <= DENSE_LIMIT or d != 3) else "kdtree"
    if algorithm == "dense":
        return _knn_dense(points, k)
    if algorithm != "kdtree":
        raise ValueError("unknown algorithm %r" % (algorithm,))
    if d != 3:
        raise ValueError("kd-tree backend requires 3-d points")
    tree = _KDTree(points)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        out[i] = tree.query(points[i], k, i)
    return out


def knn_graph(points, k, algorithm="auto"):
    """Symmetric KNN graph: directed i -> j edges for each of the k
    neighbours j of i, closed under reversal, deduplicated, and sorted by
    (source, destination)."""
    points = np.asarray(points, dtype=np.float64)
    nbr = knn_indices(points, k, algorithm=algorithm)
    n = points.shape[0]
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = nbr.reshape(-1)
    a = np.concatenate([src, dst])
    b = np.concatenate([dst, src])
    keys = np.unique(a * n + b)
    edge_index = np.stack([keys // n, keys % n])
    return GraphTopology(n, edge_index)


def knn_graph_batched(points, batch_vector, k, algorithm="auto"):
    """KNN graph built independently inside each graph of a batch, so no
    edge crosses a graph boundary. Points of one graph must occupy a
    contiguous index range (as produced by batch_graphs). Used for
    feature-space graph rebuilding, where `points` may have any width."""
    points = np.asarray(points, dtype=np.float64)
    batch_vector = np.asarray(batch_vector, dtype=np.int64)
    n = points.shape[0]
    if batch_vector.shape != (n,):
        raise ValueError("batch_vector must have one entry per point")
    parts = []
    for gid in range(int(batch_vector.max()) + 1 if n else 0):
        idx = np.flatnonzero(batch_vector == gid)
        if idx.size and not np.array_equal(idx, np.arange(idx[0], idx[-1] + 1)):
            raise ValueError("graph %d does not occupy a contiguous range" % gid)
        sub = knn_graph(points[idx], k, algorithm=algorithm)
        parts.append(sub.edge_index + idx[0])
    return GraphTopology(n, np.concatenate(parts, axis=1), batch_vector)


def batch_graphs(graphs, features=None, labels=None):
    """Disjoint union of graphs with offset vertex ids.

    Optional per-graph feature matrices and label vectors are
    concatenated in the same order; feature widths must agree.
    """
    if not graphs:
        raise ValueError("cannot batch zero graphs")
    offsets = np.cumsum([0] + [g.num_vertices for g in graphs])
    edges = [g.edge_index + off for g, off in zip(graphs, offsets)]
    batch = np.concatenate([np.full(g.num_vertices, i, dtype=np.int64)
                            for i, g in enumerate(graphs)])
    topo = GraphTopology(int(offsets[-1]), np.concatenate(edges, axis=1), batch)
    out = [topo]
    if features is not None:
        widths = {f.shape[1] for f in features}
        if len(widths) != 1:
            raise ValueError("feature width mismatch across batch: %s" % sorted(widths))
        for g, f in zip(graphs, features):
            if f.shape[0] != g.num_vertices:
                raise ValueError("feature rows %d != graph vertices %d"
                                 % (f.shape[0], g.num_vertices))
        out.append(np.concatenate(features, axis=0))
    if labels is not None:
        out.append(np.concatenate(labels))
    return out[0] if len(out) == 1 else tuple(out)


class NormalizedAdjacency:
    """D^-1/2 (A + I) D^-1/2 in edge-list form, applied via scatter ops."""

    def __init__(self, num_vertices, src, dst, weight):
        self.num_vertices = int(num_vertices)
        self.src = src
        self.dst = dst
        self.weight = weight
        self._seg_src = T.SegmentIndex(src, self.num_vertices)
        self._seg_dst = T.SegmentIndex(dst, self.num_vertices)

    def apply(self, h):
        """Multiply a (N, d) tensor by the normalized adjacency."""
        msgs = T.take_rows(h, self.src, segidx=self._seg_src)
        w = self.weight[:, None].astype(h.data.dtype, copy=False)
        msgs = T.mul_const(msgs, w)
        return T.scatter_aggregate(msgs, self.dst, self.num_vertices, "sum",
                                   segidx=self._seg_dst)

    def dense(self):
        m = np.zeros((self.num_vertices, self.num_vertices))
        m[self.dst, self.src] = self.weight
        return m


def normalize_adjacency(g):
    """GCN propagation operator for a topology (self loops included)."""
    n = g.num_vertices
    deg = np.bincount(g.dst, minlength=n).astype(np.float64) + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    loop = np.arange(n, dtype=np.int64)
    src = np.concatenate([g.src, loop])
    dst = np.concatenate([g.dst, loop])
    weight = inv_sqrt[src] * inv_sqrt[dst]
    return NormalizedAdjacency(n, src, dst, weight)


def induced_subgraph(g, kept):
    """Subgraph on the kept vertices (ascending ids), edges remapped."""
    kept = np.asarray(kept, dtype=np.int64)
    if kept.size and np.any(np.diff(kept) <= 0):
        raise ValueError("kept vertex ids must be strictly increasing")
    remap = np.full(g.num_vertices, -1, dtype=np.int64)
    remap[kept] = np.arange(kept.size, dtype=np.int64)
    keep_edge = (remap[g.src] >= 0) & (remap[g.dst] >= 0)
    edge_index = np.stack([remap[g.src[keep_edge]], remap[g.dst[keep_edge]]])
    return GraphTopology(kept.size, edge_index, g.batch_vector[kept])
