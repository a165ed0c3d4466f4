"""Layer and architecture checks: hand matrix oracles, dense attention
and convolution oracles, permutation equivariance, pooling contracts and
finite-difference gradients for every layer type."""

import numpy as np
import pytest

from plantgnn import graph as G
from plantgnn import nn as N
from plantgnn import tensor as T

from oracles import check_gradients, dense_gat_head, dense_gcn_operator


def _rand_graph(rng, n, k=3):
    return G.knn_graph(rng.standard_normal((n, 3)), k)


def _relabel(topo, perm):
    """Topology after renaming vertex old -> position of old in perm."""
    pos = np.argsort(perm)
    return G.GraphTopology(topo.num_vertices, pos[topo.edge_index],
                           topo.batch_vector[perm])


def test_model_config_validation_and_manifest():
    cfg = N.ModelConfig()
    assert cfg.architecture == "edgegat"
    assert cfg.d_in() == 13
    again = N.ModelConfig.from_manifest(cfg.manifest())
    assert again == cfg
    with pytest.raises(ValueError):
        N.ModelConfig(architecture="transformer")
    with pytest.raises(ValueError):
        N.ModelConfig(dropout=1.0)
    with pytest.raises(ValueError):
        N.ModelConfig(k_graph=0)
    with pytest.raises(ValueError):
        N.ModelConfig(feature_set="RGB")
    with pytest.raises(ValueError):
        N.ModelConfig.from_manifest({"architecture": "edgegat"})


def test_glorot_bounds_and_zero_bias():
    rng = np.random.default_rng(0)
    lin = N.Linear(40, 30, rng, "l", np.float64)
    bound = np.sqrt(6.0 / (40 + 30))
    assert np.abs(lin.weight.data).max() <= bound
    assert lin.weight.data.std() > bound / 4  # actually spread out
    np.testing.assert_array_equal(lin.bias.data, 0.0)

    x = np.random.default_rng(1).standard_normal((7, 40))
    np.testing.assert_allclose(lin(T.Tensor(x)).data,
                               x @ lin.weight.data + lin.bias.data,
                               rtol=1e-12)


def test_batchnorm_train_normalizes_and_tracks_running_stats():
    rng = np.random.default_rng(2)
    bn = N.BatchNorm(4, "bn", np.float64)
    x = rng.standard_normal((64, 4)) * 3.0 + 5.0
    out = bn(T.Tensor(x), training=True).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-3)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0), rtol=1e-9)
    np.testing.assert_allclose(
        bn.running_var, 0.9 + 0.1 * x.var(axis=0), rtol=1e-9)

    # eval path uses the running statistics, not the batch
    y = rng.standard_normal((8, 4))
    got = bn(T.Tensor(y), training=False).data
    want = (y - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
    np.testing.assert_allclose(got, want, rtol=1e-9)


def test_residual_mlp_identity_when_transform_zeroed():
    rng = np.random.default_rng(3)
    blk = N.ResidualMLP(6, 8, 6, rng, "r", np.float64)
    blk.fc2.weight.data[:] = 0.0
    blk.fc2.bias.data[:] = 0.0
    x = rng.standard_normal((10, 6))
    np.testing.assert_array_equal(blk(T.Tensor(x)).data, x)


def test_residual_mlp_projects_when_widths_differ():
    rng = np.random.default_rng(4)
    blk = N.ResidualMLP(6, 8, 5, rng, "r", np.float64)
    assert blk.proj is not None
    blk.fc2.weight.data[:] = 0.0
    blk.fc2.bias.data[:] = 0.0
    x = rng.standard_normal((10, 6))
    np.testing.assert_allclose(blk(T.Tensor(x)).data, x @ blk.proj.data,
                               rtol=1e-12)


def test_residual_mlp_matches_hand_matrix_oracle():
    rng = np.random.default_rng(5)
    blk = N.ResidualMLP(2, 3, 2, rng, "r", np.float64, slope=0.2, dropout_p=0.0)
    blk.bn.running_mean = np.array([0.1, -0.2, 0.3])
    blk.bn.running_var = np.array([1.5, 0.7, 2.0])
    x = rng.standard_normal((5, 2))

    h = x @ blk.fc1.weight.data + blk.fc1.bias.data
    h = (h - blk.bn.running_mean) / np.sqrt(blk.bn.running_var + blk.bn.eps)
    h = h * blk.bn.gamma.data + blk.bn.beta.data
    h = np.where(h >= 0, h, 0.2 * h)
    want = h @ blk.fc2.weight.data + blk.fc2.bias.data + x

    np.testing.assert_allclose(blk(T.Tensor(x)).data, want, rtol=1e-9)


def test_edgeconv_wiring_matches_manual_composition():
    rng = np.random.default_rng(6)
    layer = N.EdgeConv(4, 5, 6, "sum", rng, "ec", np.float64)
    topo = _rand_graph(np.random.default_rng(7), 9, 2)
    h = rng.standard_normal((9, 4))

    src, dst = topo.edge_index
    edge_in = np.concatenate([h[dst], h[src] - h[dst]], axis=1)
    per_edge = layer.mlp(T.Tensor(edge_in)).data
    want = np.zeros((9, 6))
    np.add.at(want, dst, per_edge)

    got = layer(T.Tensor(h), topo).data
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)


def test_edgeconv_mean_and_bias_accumulation():
    rng = np.random.default_rng(8)
    for agg in ("sum", "mean"):
        layer = N.EdgeConv(3, 4, 5, agg, rng, "ec", np.float64)
        for lin in (layer.mlp.fc1, layer.mlp.fc2):
            lin.weight.data[:] = 0.0
            lin.bias.data[:] = 0.0
        layer.mlp.proj.data[:] = 0.0
        b = np.array([1.0, -2.0, 3.0, 0.5, 4.0])
        layer.mlp.fc2.bias.data[:] = b

        topo = _rand_graph(np.random.default_rng(9), 8, 2)
        out = layer(T.Tensor(rng.standard_normal((8, 3))), topo).data
        indeg = np.bincount(topo.edge_index[1], minlength=8).astype(float)
        want = np.outer(indeg, b) if agg == "sum" \
            else np.outer(np.ones(8), b)  # knn graphs leave no vertex isolated
        np.testing.assert_allclose(out, want, rtol=1e-12)
    with pytest.raises(ValueError):
        N.EdgeConv(3, 4, 5, "max", rng, "ec", np.float64)


def test_gat_uniform_attention_on_identical_features():
    rng = np.random.default_rng(10)
    layer = N.GATLayer(4, 6, 2, "concat", rng, "g", np.float64)
    topo = _rand_graph(np.random.default_rng(11), 7, 2)
    x = np.tile(rng.standard_normal(4), (7, 1))
    layer(T.Tensor(x), topo)
    indeg = np.bincount(topo.edge_index[1], minlength=7) + 1.0
    for alpha, _, dst in layer.last_attention:
        np.testing.assert_allclose(alpha, 1.0 / indeg[dst], rtol=1e-12)


def test_gat_matches_dense_oracle():
    rng = np.random.default_rng(12)
    topo = _rand_graph(np.random.default_rng(13), 8, 3)
    x = rng.standard_normal((8, 5))
    pairs = list(zip(*topo.edge_index))

    for combine in ("concat", "average"):
        layer = N.GATLayer(5, 6, 3, combine, rng, "g", np.float64)
        out = layer(T.Tensor(x), topo).data
        per_head = []
        for h in range(3):
            o, alpha = dense_gat_head(x, pairs, layer.w[h].data,
                                      layer.a_dst[h].data, layer.a_src[h].data)
            per_head.append(o)
            got_alpha = np.zeros((8, 8))
            a, src, dst = layer.last_attention[h]
            got_alpha[dst, src] = a
            np.testing.assert_allclose(got_alpha, alpha, rtol=1e-9, atol=1e-12)
        want = np.concatenate(per_head, axis=1) if combine == "concat" \
            else sum(per_head) / 3.0
        np.testing.assert_allclose(out, want, rtol=1e-9, atol=1e-12)


def test_gat_attention_sums_to_one_per_vertex():
    rng = np.random.default_rng(14)
    layer = N.GATLayer(4, 8, 4, "concat", rng, "g", np.float64)
    topo = _rand_graph(np.random.default_rng(15), 20, 4)
    layer(T.Tensor(rng.standard_normal((20, 4))), topo)
    for alpha, _, dst in layer.last_attention:
        sums = np.zeros(20)
        np.add.at(sums, dst, alpha)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_gat_edgeless_graph_reduces_to_projection():
    rng = np.random.default_rng(16)
    layer = N.GATLayer(4, 6, 2, "average", rng, "g", np.float64)
    topo = G.GraphTopology(5, np.zeros((2, 0), dtype=np.int64))
    x = rng.standard_normal((5, 4))
    out = layer(T.Tensor(x), topo).data
    want = (x @ layer.w[0].data + x @ layer.w[1].data) / 2.0
    np.testing.assert_allclose(out, want, rtol=1e-12)


def test_gcnconv_matches_dense_operator():
    rng = np.random.default_rng(17)
    topo = _rand_graph(np.random.default_rng(18), 10, 3)
    layer = N.GCNConv(4, 6, rng, "c", np.float64)
    x = rng.standard_normal((10, 4))
    adj = G.normalize_adjacency(topo)
    dense = dense_gcn_operator(10, zip(*topo.edge_index))
    want = dense @ x @ layer.lin.weight.data + layer.lin.bias.data
    np.testing.assert_allclose(layer(T.Tensor(x), adj).data, want,
                               rtol=1e-9, atol=1e-12)


def test_topk_pool_selection_and_gating():
    rng = np.random.default_rng(19)
    pool = N.TopKPool(3, 0.5, rng, "p", np.float64)
    pool.p.data[:] = np.array([[2.0], [0.0], [0.0]])  # score = 2*x0 / 2
    # path graph 0-1-2-...-7
    e = np.array([[i, i + 1] for i in range(7)]).T
    topo = G.GraphTopology(8, np.concatenate([e, e[::-1]], axis=1))
    h = np.zeros((8, 3))
    h[:, 0] = [0.5, 3.0, 1.0, 3.0, -2.0, 0.25, 2.0, -1.0]

    hk, sub, kept = pool(T.Tensor(h), topo)
    # top-4 scores are 3, 3, 2, 1 at indices 1, 3, 6, 2; ties keep index
    # order, kept indices are reported sorted
    np.testing.assert_array_equal(kept, [1, 2, 3, 6])
    np.testing.assert_allclose(hk.data, np.tanh(h[kept, :1]) * h[kept],
                               rtol=1e-12)
    got = sorted(zip(*sub.edge_index))
    assert got == [(0, 1), (1, 0), (1, 2), (2, 1)]  # 1-2, 2-3 survive


def test_topk_pool_ratio_one_keeps_every_vertex():
    rng = np.random.default_rng(20)
    pool = N.TopKPool(4, 1.0, rng, "p", np.float64)
    topo = _rand_graph(np.random.default_rng(21), 6, 2)
    h = rng.standard_normal((6, 4))
    hk, sub, kept = pool(T.Tensor(h), topo)
    np.testing.assert_array_equal(kept, np.arange(6))
    np.testing.assert_array_equal(sub.edge_index, topo.edge_index)
    score = h @ pool.p.data / np.linalg.norm(pool.p.data)
    np.testing.assert_allclose(hk.data, np.tanh(score) * h, rtol=1e-12)
    with pytest.raises(ValueError):
        N.TopKPool(4, 0.0, rng, "p", np.float64)


def test_unpool_scatters_rows_and_adds_skip():
    rng = np.random.default_rng(22)
    h = rng.standard_normal((3, 4))
    skip = rng.standard_normal((6, 4))
    kept = np.array([1, 2, 5])
    out = N.unpool(T.Tensor(h), kept, 6, T.Tensor(skip)).data
    want = skip.copy()
    want[kept] += h
    np.testing.assert_allclose(out, want, rtol=1e-12)
    bare = N.unpool(T.Tensor(h), kept, 6).data
    assert np.all(bare[[0, 3, 4]] == 0.0)
    np.testing.assert_array_equal(bare[kept], h)


def test_edgegat_shape_contract():
    cfg = N.ModelConfig()
    model = N.build_model(cfg, 0)
    assert model.ec1.mlp.fc1.weight.data.shape == (26, 32)
    assert model.ec1.mlp.fc2.weight.data.shape == (32, 64)
    assert model.ec2.mlp.fc1.weight.data.shape == (128, 32)
    assert model.ec2.mlp.fc2.weight.data.shape == (32, 64)
    assert all(w.data.shape == (77, 64) for w in model.gat1.w)
    assert all(w.data.shape == (256, 64) for w in model.gat2.w)
    assert model.head.weight.data.shape == (64, 3)

    rng = np.random.default_rng(23)
    n = 40
    topo = _rand_graph(np.random.default_rng(24), n, 4)
    x = rng.standard_normal((n, 13))
    logits = model.forward(x, topo)
    assert logits.data.shape == (n, 3)
    assert model.intermediate_shapes == {
        "concat": (n, 77), "gat1": (n, 256), "gat2": (n, 64),
        "logits": (n, 3),
    }


def test_all_architectures_permutation_equivariant():
    rng = np.random.default_rng(25)
    n = 24
    topo = _rand_graph(np.random.default_rng(26), n, 3)
    for arch in N.ARCHITECTURES:
        cfg = N.ModelConfig(architecture=arch, feature_set="XYZ-NC", k_graph=3)
        model = N.build_model(cfg, 5)
        x = rng.standard_normal((n, 7))
        base = model.forward(x, topo).data

        perm = np.random.default_rng(27).permutation(n)
        out = model.forward(x[perm], _relabel(topo, perm)).data
        np.testing.assert_allclose(out, base[perm], rtol=1e-6, atol=1e-9,
                                   err_msg=arch)


def test_batched_forward_equals_per_graph_forward():
    rng = np.random.default_rng(28)
    parts = [rng.standard_normal((n, 3)) for n in (14, 9)]
    topos = [G.knn_graph(p, 3) for p in parts]
    feats = [rng.standard_normal((p.shape[0], 7)) for p in parts]
    batched, x = G.batch_graphs(topos, feats)
    for arch in N.ARCHITECTURES:
        cfg = N.ModelConfig(architecture=arch, feature_set="XYZ-NC", k_graph=3)
        model = N.build_model(cfg, 3)
        whole = model.forward(x, batched).data
        sep = [model.forward(f, t).data for f, t in zip(feats, topos)]
        np.testing.assert_allclose(whole, np.vstack(sep), rtol=1e-7,
                                   atol=1e-10, err_msg=arch)


def test_dropout_semantics():
    rng = np.random.default_rng(29)
    x = T.Tensor(np.ones((400, 5)))
    assert N.dropout(x, 0.2, None, training=False) is x
    assert N.dropout(x, 0.0, None, training=True) is x
    out = N.dropout(x, 0.5, rng, training=True).data
    kept = out != 0.0
    np.testing.assert_allclose(out[kept], 2.0, rtol=1e-12)
    assert 0.35 < kept.mean() < 0.65
    with pytest.raises(ValueError):
        N.dropout(x, 0.5, None, training=True)


def test_forward_determinism_without_dropout():
    cfg = N.ModelConfig(feature_set="XYZ", k_graph=2, dropout=0.0)
    model = N.build_model(cfg, 11)
    rng = np.random.default_rng(30)
    topo = _rand_graph(np.random.default_rng(31), 12, 2)
    x = rng.standard_normal((12, 3))
    a = model.forward(x, topo, training=True, rng=np.random.default_rng(0)).data
    b = model.forward(x, topo, training=True, rng=np.random.default_rng(1)).data
    assert np.array_equal(a, b)


def _layer_loss(out):
    w = np.arange(out.data.size, dtype=np.float64).reshape(out.data.shape) / 7.0
    return T.mean(T.mul_const(out, w))


def test_residual_mlp_gradients():
    rng = np.random.default_rng(32)
    blk = N.ResidualMLP(4, 5, 6, rng, "r", np.float64, dropout_p=0.0)
    x = rng.standard_normal((9, 4))
    check_gradients(lambda: _layer_loss(blk(T.Tensor(x), training=True)),
                    blk.parameters(), rng)


def test_edgeconv_gradients():
    rng = np.random.default_rng(33)
    layer = N.EdgeConv(3, 4, 5, "mean", rng, "ec", np.float64, dropout_p=0.0)
    topo = _rand_graph(np.random.default_rng(34), 10, 2)
    x = rng.standard_normal((10, 3))
    check_gradients(
        lambda: _layer_loss(layer(T.Tensor(x), topo, training=True)),
        layer.parameters(), rng)


def test_gat_gradients():
    rng = np.random.default_rng(35)
    layer = N.GATLayer(3, 4, 2, "concat", rng, "g", np.float64)
    topo = _rand_graph(np.random.default_rng(36), 10, 2)
    x = rng.standard_normal((10, 3))
    check_gradients(lambda: _layer_loss(layer(T.Tensor(x), topo)),
                    layer.parameters(), rng)


def test_gcnconv_gradients():
    rng = np.random.default_rng(37)
    layer = N.GCNConv(3, 5, rng, "c", np.float64)
    topo = _rand_graph(np.random.default_rng(38), 10, 2)
    adj = G.normalize_adjacency(topo)
    x = rng.standard_normal((10, 3))
    check_gradients(lambda: _layer_loss(layer(T.Tensor(x), adj)),
                    layer.parameters(), rng)


def test_pool_unpool_gradients():
    rng = np.random.default_rng(39)
    pool = N.TopKPool(4, 0.5, rng, "p", np.float64)
    topo = _rand_graph(np.random.default_rng(40), 10, 2)
    x = rng.standard_normal((10, 4))
    skip = rng.standard_normal((10, 4))

    def f():
        hk, _, kept = pool(T.Tensor(x), topo)
        return _layer_loss(N.unpool(hk, kept, 10, T.Tensor(skip)))

    check_gradients(f, pool.parameters(), rng)


def test_batchnorm_train_gradients():
    rng = np.random.default_rng(41)
    bn = N.BatchNorm(4, "bn", np.float64)
    x = rng.standard_normal((12, 4))

    def f():
        bn.running_mean = np.zeros(4)  # keep f() side-effect free
        bn.running_var = np.ones(4)
        return _layer_loss(bn(T.Tensor(x), training=True))

    check_gradients(f, bn.parameters(), rng)
