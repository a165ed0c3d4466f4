"""Graph construction checks: exact KNN on both backends against a
brute-force oracle, topology invariants, batching, and the normalized
adjacency operator against its dense form."""

import numpy as np
import pytest

from plantgnn import graph as G
from plantgnn.errors import DataError

from oracles import brute_force_knn, dense_gcn_operator


def test_knn_matches_brute_force_both_backends():
    rng = np.random.default_rng(0)
    for trial in range(30):
        n = int(rng.integers(8, 120))
        pts = rng.standard_normal((n, 3))
        if trial % 3 == 0:
            # duplicated points force distance ties
            pts[: n // 2] = pts[n // 2 : 2 * (n // 2)]
        for k in (1, 4, min(16, n - 1)):
            want = np.array([brute_force_knn(pts, i, k) for i in range(n)])
            for algo in ("dense", "kdtree"):
                got = G.knn_indices(pts, k, algorithm=algo)
                np.testing.assert_array_equal(got, want, err_msg=f"{algo} k={k}")


def test_knn_tie_break_prefers_lower_index():
    # four corners of a square: both non-opposite corners are equidistant
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    idx = G.knn_indices(pts, 2)
    np.testing.assert_array_equal(idx[0], [1, 2])
    np.testing.assert_array_equal(idx[3], [1, 2])


def test_knn_auto_dispatch_consistent_across_threshold():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((G.DENSE_LIMIT + 64, 3)).astype(np.float64)
    sub = pts[: G.DENSE_LIMIT - 64]
    for cloud in (sub, pts):
        a = G.knn_indices(cloud, 8, algorithm="dense")
        b = G.knn_indices(cloud, 8, algorithm="kdtree")
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(G.knn_indices(pts, 8),
                                  G.knn_indices(pts, 8, algorithm="dense"))


def test_knn_validates_arguments():
    pts = np.zeros((5, 3))
    with pytest.raises(ValueError):
        G.knn_indices(pts, 0)
    with pytest.raises(ValueError):
        G.knn_indices(pts, 5)  # k must leave out the point itself
    with pytest.raises(ValueError):
        G.knn_indices(np.zeros((5, 3, 1)), 2)
    with pytest.raises(ValueError):
        G.knn_indices(pts, 2, algorithm="octree")


def test_knn_graph_invariants():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(10, 60))
        k = int(rng.integers(1, 6))
        pts = rng.standard_normal((n, 3))
        topo = G.knn_graph(pts, k)
        topo.validate()
        src, dst = topo.edge_index
        assert topo.num_vertices == n
        assert np.all(src != dst)
        # symmetric closure: reversed pairs all present
        fwd = set(zip(src.tolist(), dst.tolist()))
        assert all((d, s) in fwd for s, d in fwd)
        # at least the k mutual/directed neighbour relations survive
        knn = G.knn_indices(pts, k)
        for i in range(n):
            for j in knn[i]:
                assert (i, int(j)) in fwd
        # edges sorted by (src, dst) with no duplicates
        key = src * n + dst
        assert np.all(np.diff(key) > 0)


def test_batch_graphs_offsets_and_vectors():
    rng = np.random.default_rng(3)
    parts = [rng.standard_normal((n, 3)) for n in (12, 7, 20)]
    feats = [rng.standard_normal((p.shape[0], 5)) for p in parts]
    labels = [rng.integers(0, 3, size=p.shape[0]) for p in parts]
    topos = [G.knn_graph(p, 3) for p in parts]

    topo, x, y = G.batch_graphs(topos, feats, labels)
    topo.validate()
    assert topo.num_vertices == 39
    np.testing.assert_array_equal(topo.batch_vector,
                                  np.repeat([0, 1, 2], [12, 7, 20]))
    np.testing.assert_array_equal(x, np.vstack(feats))
    np.testing.assert_array_equal(y, np.concatenate(labels))

    offset = 0
    for t, p in zip(topos, parts):
        n = p.shape[0]
        mask = (topo.edge_index[0] >= offset) & (topo.edge_index[0] < offset + n)
        sub = topo.edge_index[:, mask] - offset
        np.testing.assert_array_equal(sub, t.edge_index)
        offset += n


def test_batch_graphs_rejects_mismatched_widths():
    t = G.knn_graph(np.random.default_rng(4).standard_normal((8, 3)), 2)
    with pytest.raises(ValueError):
        G.batch_graphs([t, t], [np.zeros((8, 4)), np.zeros((8, 5))])
    with pytest.raises(ValueError):
        G.batch_graphs([t], [np.zeros((7, 4))])


def test_knn_graph_batched_has_no_cross_edges():
    rng = np.random.default_rng(5)
    parts = [rng.standard_normal((n, 3)) for n in (15, 9, 11)]
    topos = [G.knn_graph(p, 3) for p in parts]
    batched, _ = G.batch_graphs(topos, [p.copy() for p in parts])

    rebuilt = G.knn_graph_batched(np.vstack(parts), batched.batch_vector, 3)
    rebuilt.validate()
    np.testing.assert_array_equal(rebuilt.edge_index, batched.edge_index)
    np.testing.assert_array_equal(rebuilt.batch_vector, batched.batch_vector)


def test_topology_validate_rejects_defects():
    e = np.array([[0, 1], [1, 0]])
    G.GraphTopology(2, e).validate()
    with pytest.raises(DataError, match="self"):
        G.GraphTopology(2, np.array([[0, 0, 1], [0, 1, 0]])).validate()
    with pytest.raises(DataError, match="revers|symmetr"):
        G.GraphTopology(3, np.array([[0], [1]])).validate()
    with pytest.raises(DataError, match="range|vertex"):
        G.GraphTopology(2, np.array([[0, 2], [2, 0]])).validate()
    with pytest.raises(DataError, match="duplicate"):
        G.GraphTopology(2, np.array([[0, 0, 1], [1, 1, 0]])).validate()
    # edge joining two different graphs of a batch
    with pytest.raises(DataError, match="batch"):
        G.GraphTopology(2, e, batch_vector=np.array([0, 1])).validate()
    with pytest.raises(DataError, match="batch"):
        G.GraphTopology(3, np.array([[0, 1], [1, 0]]),
                        batch_vector=np.array([0, 1, 0])).validate()


def test_with_self_loops_appends_diagonal():
    topo = G.knn_graph(np.random.default_rng(6).standard_normal((9, 3)), 2)
    src, dst = topo.with_self_loops()[:2]
    e = topo.edge_index.shape[1]
    np.testing.assert_array_equal(src[e:], np.arange(9))
    np.testing.assert_array_equal(dst[e:], np.arange(9))
    np.testing.assert_array_equal(src[:e], topo.edge_index[0])


def test_normalized_adjacency_matches_dense_operator():
    rng = np.random.default_rng(7)
    for _ in range(10):
        n = int(rng.integers(3, 24))
        pts = rng.standard_normal((n, 3))
        topo = G.knn_graph(pts, min(3, n - 1))
        adj = G.normalize_adjacency(topo)
        dense = dense_gcn_operator(n, topo.edge_index.T)
        np.testing.assert_allclose(adj.dense(), dense, rtol=1e-12, atol=1e-12)

        x = rng.standard_normal((n, 6))
        from plantgnn import tensor as T
        t = T.Tensor(x, requires_grad=True)
        out = adj.apply(t)
        np.testing.assert_allclose(out.data, dense @ x, rtol=1e-12, atol=1e-12)
        w = rng.standard_normal((n, 6))
        T.backward(T.sum(T.mul_const(out, w)))
        np.testing.assert_allclose(t.grad, dense.T @ w, rtol=1e-12, atol=1e-12)


def test_normalized_adjacency_isolated_vertex_is_identity_row():
    topo = G.GraphTopology(3, np.array([[0, 1], [1, 0]]))
    dense = G.normalize_adjacency(topo).dense()
    np.testing.assert_allclose(dense[2], [0.0, 0.0, 1.0])


def test_induced_subgraph_matches_bruteforce():
    rng = np.random.default_rng(8)
    for _ in range(10):
        n = int(rng.integers(6, 30))
        topo = G.knn_graph(rng.standard_normal((n, 3)), 2)
        kept = np.sort(rng.choice(n, size=max(2, n // 2), replace=False))
        sub = G.induced_subgraph(topo, kept)
        sub.validate()

        pos = {int(v): i for i, v in enumerate(kept)}
        want = sorted(
            (pos[s], pos[d])
            for s, d in zip(*topo.edge_index)
            if int(s) in pos and int(d) in pos
        )
        got = sorted(zip(sub.edge_index[0].tolist(), sub.edge_index[1].tolist()))
        assert got == want
        assert sub.num_vertices == kept.size


def test_induced_subgraph_requires_sorted_unique():
    topo = G.GraphTopology(4, np.array([[0, 1], [1, 0]]))
    with pytest.raises(ValueError):
        G.induced_subgraph(topo, np.array([2, 1]))
    with pytest.raises(ValueError):
        G.induced_subgraph(topo, np.array([1, 1]))
