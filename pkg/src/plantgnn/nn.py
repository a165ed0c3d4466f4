"""Layers and model assemblies for point-cloud segmentation.

Everything is built on the tensor module's autodiff primitives. Layers
are plain classes owning named Parameters; models wire them together in
an explicit forward method and expose the parameter list in a fixed
order, which keys both the optimizer state and the checkpoint layout.

Architectures: ``edgegat`` (two EdgeConv blocks, a 13+64 concat, two
4-head attention layers, linear head) and the baselines ``gcn``,
``gat``, ``gcn_unet``, ``gcn_unet2`` and ``pointnet``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import induced_subgraph, knn_graph_batched, normalize_adjacency
from .geomfeat import feature_width

LEAKY_SLOPE = 0.2
DROPOUT_P = 0.2
GAT_HEADS = 4
HIDDEN = 64

ARCHITECTURES = ("edgegat", "gcn", "gat", "gcn_unet", "gcn_unet2", "pointnet")


@dataclass
class ModelConfig:
    architecture: str = "edgegat"
    feature_set: str = "XYZ-NCLPSOAE"
    k_graph: int = 16
    k_features: int = 16
    num_classes: int = 3
    dropout: float = DROPOUT_P
    slope: float = LEAKY_SLOPE
    dynamic_knn: bool = False

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError("unknown architecture %r (choose from %s)"
                             % (self.architecture, ", ".join(ARCHITECTURES)))
        feature_width(self.feature_set)  # validates the name
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1), got %g" % self.dropout)
        if self.k_graph < 1 or self.k_features < 3 or self.num_classes < 2:
            raise ValueError("bad model config: k_graph=%d k_features=%d num_classes=%d"
                             % (self.k_graph, self.k_features, self.num_classes))

    def d_in(self):
        return feature_width(self.feature_set)

    def manifest(self):
        return {
            "architecture": self.architecture,
            "feature_set": self.feature_set,
            "k_graph": str(self.k_graph),
            "k_features": str(self.k_features),
            "num_classes": str(self.num_classes),
            "dropout": repr(self.dropout),
            "slope": repr(self.slope),
            "dynamic_knn": str(int(self.dynamic_knn)),
        }

    @classmethod
    def from_manifest(cls, manifest):
        try:
            return cls(
                architecture=manifest["architecture"],
                feature_set=manifest["feature_set"],
                k_graph=int(manifest["k_graph"]),
                k_features=int(manifest["k_features"]),
                num_classes=int(manifest["num_classes"]),
                dropout=float(manifest["dropout"]),
                slope=float(manifest["slope"]),
                dynamic_knn=bool(int(manifest.get("dynamic_knn", "0"))),
            )
        except KeyError as exc:
            raise ValueError("checkpoint manifest is missing %s" % exc) from None


def glorot(rng, shape, dtype):
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def dropout(x, p, rng, training):
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    u = rng.random(x.data.shape, dtype=x.data.dtype)
    mask = (u >= p).astype(x.data.dtype) / (1.0 - p)
    return T.mul_const(x, mask)


def _as_tensor(x, dtype):
    if isinstance(x, T.Tensor):
        return x
    return T.Tensor(np.asarray(x, dtype=dtype))


class Linear:
    def __init__(self, d_in, d_out, rng, name, dtype, bias=True):
        self.weight = T.Parameter(glorot(rng, (d_in, d_out), dtype), name + ".weight")
        self.bias = T.Parameter(np.zeros(d_out, dtype=dtype), name + ".bias") if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return T.add(y, self.bias) if self.bias is not None else y

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def state(self):
        return {p.name: p.data for p in self.parameters()}


class BatchNorm:
    """Per-feature normalization with running statistics for evaluation."""

    def __init__(self, dim, name, dtype, momentum=0.1, eps=1e-5):
        self.gamma = T.Parameter(np.ones(dim, dtype=dtype), name + ".gamma")
        self.beta = T.Parameter(np.zeros(dim, dtype=dtype), name + ".beta")
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)

    def __call__(self, x, training):
        if training:
            y, mu, var = T.batchnorm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean = ((1.0 - m) * self.running_mean + m * mu).astype(self.running_mean.dtype)
            self.running_var = ((1.0 - m) * self.running_var + m * var).astype(self.running_var.dtype)
            return y
        xc = T.add_const(x, -self.running_mean)
        xhat = T.mul_const(xc, 1.0 / np.sqrt(self.running_var + self.eps))
        return T.add(T.scale_cols(xhat, self.gamma), self.beta)

    def parameters(self):
        return [self.gamma, self.beta]

    def state(self):
        return {
            self.gamma.name: self.gamma.data,
            self.beta.name: self.beta.data,
            self.name + ".running_mean": self.running_mean,
            self.name + ".running_var": self.running_var,
        }

    def load(self, arrays):
        self.running_mean = arrays[self.name + ".running_mean"].astype(self.running_mean.dtype)
        self.running_var = arrays[self.name + ".running_var"].astype(self.running_var.dtype)


class ResidualMLP:
    """Linear-BatchNorm-LeakyReLU-Dropout-Linear plus a skip path.

    The skip is the identity when widths agree, otherwise a bias-free
    learned projection, so zeroing the transform path leaves the block
    an exact identity (or pure projection).
    """

    def __init__(self, d_in, d_hidden, d_out, rng, name, dtype,
                 slope=LEAKY_SLOPE, dropout_p=DROPOUT_P):
        if min(d_in, d_hidden, d_out) < 1:
            raise ValueError("widths must be >= 1")
        self.fc1 = Linear(d_in, d_hidden, rng, name + ".fc1", dtype)
        self.bn = BatchNorm(d_hidden, name + ".bn", dtype)
        self.fc2 = Linear(d_hidden, d_out, rng, name + ".fc2", dtype)
        self.proj = None if d_in == d_out else \
            T.Parameter(glorot(rng, (d_in, d_out), dtype), name + ".proj")
        self.slope = slope
        self.dropout_p = dropout_p

    def __call__(self, x, training=False, rng=None):
        y = self.fc1(x)
        y = self.bn(y, training)
        y = T.leaky_relu(y, self.slope)
        y = dropout(y, self.dropout_p, rng, training)
        y = self.fc2(y)
        skip = x if self.proj is None else T.matmul(x, self.proj)
        return T.add(y, skip)

    def parameters(self):
        ps = self.fc1.parameters() + self.bn.parameters() + self.fc2.parameters()
        if self.proj is not None:
            ps.append(self.proj)
        return ps

    def state(self):
        s = {}
        s.update(self.fc1.state())
        s.update(self.bn.state())
        s.update(self.fc2.state())
        if self.proj is not None:
            s[self.proj.name] = self.proj.data
        return s

    def load(self, arrays):
        self.bn.load(arrays)


class EdgeConv:
    """Edge features [h_i || h_j - h_i] through a Residual MLP, then a
    fixed aggregation (sum or mean) at the receiving vertex i."""

    def __init__(self, d_in, d_hidden, d_out, aggregation, rng, name, dtype,
                 slope=LEAKY_SLOPE, dropout_p=DROPOUT_P, dynamic_k=0):
        if aggregation not in ("sum", "mean"):
            raise ValueError("aggregation must be sum or mean, got %r" % (aggregation,))
        self.mlp = ResidualMLP(2 * d_in, d_hidden, d_out, rng, name + ".mlp", dtype,
                               slope=slope, dropout_p=dropout_p)
        self.aggregation = aggregation
        self.dynamic_k = dynamic_k  # > 0: rebuild the graph in feature space

    def __call__(self, h, g, training=False, rng=None):
        n = g.num_vertices
        if self.dynamic_k:
            g = knn_graph_batched(h.data, g.batch_vector, self.dynamic_k)
        seg_src, seg_dst = g.segments()
        mlp = self.mlp
        dtype = h.data.dtype
        d = h.data.shape[1]
        top = np.arange(d)
        bot = np.arange(d, 2 * d)
        # [h_i || h_j - h_i] @ W = h_i @ (W_top - W_bot) + h_j @ W_bot, so
        # the first linear runs per vertex and only its gather-add runs
        # per edge
        w_top = T.take_rows(mlp.fc1.weight, top)
        w_bot = T.take_rows(mlp.fc1.weight, bot)
        p = T.add(T.matmul(h, T.sub(w_top, w_bot)), mlp.fc1.bias)
        q = T.matmul(h, w_bot)
        y = T.edge_combine(p, q, g.src, g.dst, seg_src, seg_dst)
        y = mlp.bn(y, training)
        y = T.leaky_relu(y, mlp.slope)
        y = dropout(y, mlp.dropout_p, rng, training)
        # the second linear, its bias and the skip are linear in the edge
        # values, so they commute with the aggregation: apply them to the
        # aggregated table, with per-edge constants weighted by in-degree
        z = T.matmul(T.scatter_aggregate(y, g.dst, n, self.aggregation,
                                         segidx=seg_dst), mlp.fc2.weight)
        counts = seg_dst.counts.astype(dtype)
        if self.aggregation == "sum":
            center_w, neigh_w = counts, np.ones_like(counts)
        else:
            center_w = (counts > 0).astype(dtype)
            neigh_w = np.divide(center_w, counts,
                                out=np.zeros_like(counts), where=counts > 0)
        hs = T.adjacency_matmul(h, g.src, g.dst, n, segidx=seg_dst)
        if mlp.proj is not None:
            s_top = T.take_rows(mlp.proj, top)
            s_bot = T.take_rows(mlp.proj, bot)
            center = T.matmul(h, T.sub(s_top, s_bot))
            neigh = T.matmul(hs, s_bot)
        else:
            center = T.concat([h, T.smul(h, -1.0)], axis=1)
            neigh = T.concat([T.Tensor(np.zeros((n, d), dtype=dtype)), hs],
                             axis=1)
        center = T.add(center, mlp.fc2.bias)
        return T.add(z, T.add(T.scale_rows(center, T.Tensor(center_w)),
                              T.scale_rows(neigh, T.Tensor(neigh_w))))

    def parameters(self):
        return self.mlp.parameters()

    def state(self):
        return self.mlp.state()

    def load(self, arrays):
        self.mlp.load(arrays)


class GATLayer:
    """Multi-head additive attention over graph edges plus self-loops.

    Per head: e_ij = LeakyReLU(a_l . Wh_i + a_r . Wh_j) for each edge
    j -> i, softmax over each destination's incoming edges, then the
    attention-weighted sum of Wh_j. Heads are concatenated or averaged.
    """

    def __init__(self, d_in, d_out, heads, combine, rng, name, dtype,
                 slope=LEAKY_SLOPE):
        if heads < 1:
            raise ValueError("heads must be >= 1")
        if combine not in ("concat", "average"):
            raise ValueError("combine must be concat or average, got %r" % (combine,))
        self.w = [T.Parameter(glorot(rng, (d_in, d_out), dtype), "%s.w%d" % (name, h))
                  for h in range(heads)]
        self.a_dst = [T.Parameter(glorot(rng, (d_out, 1), dtype), "%s.adst%d" % (name, h))
                      for h in range(heads)]
        self.a_src = [T.Parameter(glorot(rng, (d_out, 1), dtype), "%s.asrc%d" % (name, h))
                      for h in range(heads)]
        self.heads = heads
        self.combine = combine
        self.slope = slope
        self.last_attention = None  # list of (alpha, src, dst) per head
        self._constants = {}

    def _block_constants(self, dtype):
        # fixed 0/1 selectors so all heads run as one wide block of columns
        key = np.dtype(dtype).str
        if key not in self._constants:
            heads, d_out = self.heads, self.w[0].data.shape[1]
            pick = np.zeros((heads * d_out, heads), dtype=dtype)
            for h in range(heads):
                pick[h * d_out:(h + 1) * d_out, h] = 1.0
            avg = np.zeros((heads * d_out, d_out), dtype=dtype)
            for h in range(heads):
                avg[h * d_out:(h + 1) * d_out] = np.eye(d_out, dtype=dtype) / heads
            self._constants[key] = (T.Tensor(pick), T.Tensor(avg))
        return self._constants[key]

    def __call__(self, x, g):
        n = g.num_vertices
        src, dst, seg_src, seg_dst = g.with_self_loops()
        pick, avg = self._block_constants(x.data.dtype)
        wh = T.matmul(x, T.concat(self.w, axis=1))
        a_dst = T.transpose(T.concat(self.a_dst, axis=0))
        a_src = T.transpose(T.concat(self.a_src, axis=0))
        score_dst = T.matmul(T.scale_cols(wh, a_dst), pick)
        score_src = T.matmul(T.scale_cols(wh, a_src), pick)
        logits = T.add(T.take_rows(score_dst, dst, segidx=seg_dst),
                       T.take_rows(score_src, src, segidx=seg_src))
        logits = T.leaky_relu(logits, self.slope)
        alpha = T.segment_softmax(logits, dst, n, segidx=seg_dst)
        out = T.attention_matmul(wh, alpha, src, dst, n, segidx=seg_dst)
        self.last_attention = [(alpha.data[:, h].copy(), src, dst)
                               for h in range(self.heads)]
        if self.combine == "concat":
            return out
        return T.matmul(out, avg)

    def parameters(self):
        ps = []
        for h in range(self.heads):
            ps += [self.w[h], self.a_dst[h], self.a_src[h]]
        return ps

    def state(self):
        return {p.name: p.data for p in self.parameters()}


class GCNConv:
    """One graph convolution: propagate through the normalized adjacency,
    then apply the learned linear map."""

    def __init__(self, d_in, d_out, rng, name, dtype):
        self.lin = Linear(d_in, d_out, rng, name, dtype)

    def __call__(self, x, adj):
        return self.lin(adj.apply(x))

    def parameters(self):
        return self.lin.parameters()

    def state(self):
        return self.lin.state()


def _graph_ranges(batch_vector):
    """(start, stop) pairs of each graph's contiguous vertex run."""
    if batch_vector.size == 0:
        return []
    change = np.flatnonzero(np.diff(batch_vector)) + 1
    bounds = np.concatenate([[0], change, [batch_vector.size]])
    return list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))


class TopKPool:
    """Keep the ceil(ratio * N) highest-scoring vertices.

    The score is a learned projection of the features; kept rows are
    gated by tanh(score) so the projection itself receives gradient
    (selection alone is not differentiable).
    """

    def __init__(self, d, ratio, rng, name, dtype):
        if not 0.0 < ratio <= 1.0:
            raise ValueError("pool ratio must lie in (0, 1], got %g" % ratio)
        self.p = T.Parameter(glorot(rng, (d, 1), dtype), name + ".score")
        self.ratio = ratio

    def __call__(self, h, g):
        norm = T.sqrt(T.sum(T.mul(self.p, self.p)))
        score = T.scale(T.matmul(h, self.p), T.reciprocal(norm))
        # select within each graph of the batch so no graph is starved
        flat = score.data.reshape(-1)
        kept = []
        for start, stop in _graph_ranges(g.batch_vector):
            keep = int(math.ceil(self.ratio * (stop - start)))
            order = np.argsort(-flat[start:stop], kind="stable")  # ties: lower index
            kept.append(np.sort(order[:keep]) + start)
        kept = np.concatenate(kept)
        gate = T.tanh(T.take_rows(score, kept))
        hk = T.scale_rows(T.take_rows(h, kept), gate)
        return hk, induced_subgraph(g, kept), kept

    def parameters(self):
        return [self.p]

    def state(self):
        return {self.p.name: self.p.data}


def unpool(h, kept, num_vertices, skip=None):
    """Scatter pooled rows back to their original positions (zeros
    elsewhere) and add the stored skip features."""
    out = T.scatter_aggregate(h, kept, num_vertices, "sum")
    return out if skip is None else T.add(out, skip)


class _ModelBase:
    def __init__(self, config, dtype):
        self.config = config
        self.dtype = dtype
        self._layers = []

    def _register(self, *layers):
        self._layers.extend(layers)
        return layers[0] if len(layers) == 1 else layers

    def parameters(self):
        return [p for layer in self._layers for p in layer.parameters()]

    def state_arrays(self):
        s = {}
        for layer in self._layers:
            s.update(layer.state())
        return s

    def load_state(self, arrays):
        for p in self.parameters():
            if p.name not in arrays:
                raise ValueError("checkpoint is missing parameter %r" % p.name)
            if tuple(arrays[p.name].shape) != tuple(p.data.shape):
                raise ValueError("parameter %r has shape %s, checkpoint holds %s"
                                 % (p.name, p.data.shape, arrays[p.name].shape))
            p.data = arrays[p.name].astype(self.dtype)
        for layer in self._layers:
            if hasattr(layer, "load"):
                layer.load(arrays)

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())


class EdgeGAT(_ModelBase):
    """Two EdgeConv blocks, input re-concatenation, two attention layers
    and a linear classifier."""

    def __init__(self, config, rng, dtype):
        super().__init__(config, dtype)
        d_in = config.d_in()
        dyn = config.k_graph if config.dynamic_knn else 0
        self.ec1 = EdgeConv(d_in, 32, HIDDEN, "sum", rng, "ec1", dtype,
                            slope=config.slope, dropout_p=config.dropout, dynamic_k=dyn)
        self.ec2 = EdgeConv(HIDDEN, 32, HIDDEN, "mean", rng, "ec2", dtype,
                            slope=config.slope, dropout_p=config.dropout, dynamic_k=dyn)
        self.gat1 = GATLayer(d_in + HIDDEN, HIDDEN, GAT_HEADS, "concat", rng, "gat1",
                             dtype, slope=config.slope)
        self.gat2 = GATLayer(GAT_HEADS * HIDDEN, HIDDEN, GAT_HEADS, "average", rng,
                             "gat2", dtype, slope=config.slope)
        self.head = Linear(HIDDEN, config.num_classes, rng, "head", dtype)
        self._register(self.ec1, self.ec2, self.gat1, self.gat2, self.head)
        self.intermediate_shapes = {}

    def forward(self, x, g, training=False, rng=None):
        x = _as_tensor(x, self.dtype)
        h1 = self.ec1(x, g, training, rng)
        h2 = self.ec2(h1, g, training, rng)
        z = T.concat([x, h2], axis=1)
        a1 = dropout(self.gat1(z, g), self.config.dropout, rng, training)
        a2 = dropout(self.gat2(a1, g), self.config.dropout, rng, training)
        logits = self.head(a2)
        self.intermediate_shapes = {
            "concat": z.shape, "gat1": a1.shape, "gat2": a2.shape,
            "logits": logits.shape,
        }
        return logits


class SimpleGCN(_ModelBase):
    """Stacked graph convolutions with ReLU and dropout; raw last layer."""

    def __init__(self, config, rng, dtype):
        super().__init__(config, dtype)
        self.conv1 = GCNConv(config.d_in(), HIDDEN, rng, "conv1", dtype)
        self.conv2 = GCNConv(HIDDEN, HIDDEN, rng, "conv2", dtype)
        self.conv3 = GCNConv(HIDDEN, config.num_classes, rng, "conv3", dtype)
        self._register(self.conv1, self.conv2, self.conv3)

    def forward(self, x, g, training=False, rng=None):
        x = _as_tensor(x, self.dtype)
        adj = normalize_adjacency(g)
        h = T.leaky_relu(self.conv1(x, adj), 0.0)  # plain ReLU
        h = dropout(h, self.config.dropout, rng, training)
        h = T.leaky_relu(self.conv2(h, adj), 0.0)
        h = dropout(h, self.config.dropout, rng, training)
        return self.conv3(h, adj)


class BaselineGAT(_ModelBase):
    """Two attention layers, each with batchnorm, activation and dropout,
    then a linear classifier."""

    def __init__(self, config, rng, dtype):
        super().__init__(config, dtype)
        self.gat1 = GATLayer(config.d_in(), HIDDEN, GAT_HEADS, "concat", rng, "gat1",
                             dtype, slope=config.slope)
        self.bn1 = BatchNorm(GAT_HEADS * HIDDEN, "bn1", dtype)
        self.gat2 = GATLayer(GAT_HEADS * HIDDEN, HIDDEN, GAT_HEADS, "average", rng,
                             "gat2", dtype, slope=config.slope)
        self.bn2 = BatchNorm(HIDDEN, "bn2", dtype)
        self.head = Linear(HIDDEN, config.num_classes, rng, "head", dtype)
        self._register(self.gat1, self.bn1, self.gat2, self.bn2, self.head)

    def forward(self, x, g, training=False, rng=None):
        x = _as_tensor(x, self.dtype)
        h = self.gat1(x, g)
        h = T.leaky_relu(self.bn1(h, training), self.config.slope)
        h = dropout(h, self.config.dropout, rng, training)
        h = self.gat2(h, g)
        h = T.leaky_relu(self.bn2(h, training), self.config.slope)
        h = dropout(h, self.config.dropout, rng, training)
        return self.head(h)


class GCNUNet(_ModelBase):
    """Encoder-decoder over two pooling levels with additive skips.

    The enhanced variant wraps every convolution in batchnorm plus
    dropout; the plain variant uses bare convolutions and ReLU.
    """

    RATIO = 0.5

    def __init__(self, config, rng, dtype, enhanced=False):
        super().__init__(config, dtype)
        self.enhanced = enhanced
        self.enc0 = GCNConv(config.d_in(), HIDDEN, rng, "enc0", dtype)
        self.pool1 = TopKPool(HIDDEN, self.RATIO, rng, "pool1", dtype)
        self.enc1 = GCNConv(HIDDEN, HIDDEN, rng, "enc1", dtype)
        self.pool2 = TopKPool(HIDDEN, self.RATIO, rng, "pool2", dtype)
        self.bottleneck = GCNConv(HIDDEN, HIDDEN, rng, "bottleneck", dtype)
        self.dec1 = GCNConv(HIDDEN, HIDDEN, rng, "dec1", dtype)
        self.dec0 = GCNConv(HIDDEN, HIDDEN, rng, "dec0", dtype)
        self.head = GCNConv(HIDDEN, config.num_classes, rng, "head", dtype)
        layers = [self.enc0, self.pool1, self.enc1, self.pool2, self.bottleneck,
                  self.dec1, self.dec0, self.head]
        if enhanced:
            # one per convolution that feeds another layer (head stays raw)
            self.bns = [BatchNorm(HIDDEN, "bn%d" % i, dtype) for i in range(5)]
            layers += self.bns
        self._register(*layers)

    def _block(self, h, conv, adj, i, training, rng):
        h = T.leaky_relu(conv(h, adj), 0.0)
        if self.enhanced:
            h = self.bns[i](h, training)
            h = dropout(h, self.config.dropout, rng, training)
        return h

    def forward(self, x, g, training=False, rng=None):
        x = _as_tensor(x, self.dtype)
        adj0 = normalize_adjacency(g)
        h0 = self._block(x, self.enc0, adj0, 0, training, rng)
        p1, g1, kept1 = self.pool1(h0, g)
        adj1 = normalize_adjacency(g1)
        h1 = self._block(p1, self.enc1, adj1, 1, training, rng)
        p2, g2, kept2 = self.pool2(h1, g1)
        adj2 = normalize_adjacency(g2)
        hb = self._block(p2, self.bottleneck, adj2, 2, training, rng)
        u1 = unpool(hb, kept2, g1.num_vertices, skip=h1)
        d1 = self._block(u1, self.dec1, adj1, 3, training, rng)
        u0 = unpool(d1, kept1, g.num_vertices, skip=h0)
        d0 = self._block(u0, self.dec0, adj0, 4, training, rng)
        return self.head(d0, adj0)


class PointNetSeg(_ModelBase):
    """Per-point shared MLP, a per-cloud max-pooled global feature
    broadcast back to every point, and a small classification head.
    No input/feature transform networks."""

    def __init__(self, config, rng, dtype):
        super().__init__(config, dtype)
        d_in = config.d_in()
        self.fc1 = Linear(d_in, HIDDEN, rng, "fc1", dtype)
        self.bn1 = BatchNorm(HIDDEN, "bn1", dtype)
        self.fc2 = Linear(HIDDEN, 128, rng, "fc2", dtype)
        self.bn2 = BatchNorm(128, "bn2", dtype)
        self.fc3 = Linear(HIDDEN + 128, HIDDEN, rng, "fc3", dtype)
        self.bn3 = BatchNorm(HIDDEN, "bn3", dtype)
        self.head = Linear(HIDDEN, config.num_classes, rng, "head", dtype)
        self._register(self.fc1, self.bn1, self.fc2, self.bn2,
                       self.fc3, self.bn3, self.head)

    def forward(self, x, g, training=False, rng=None):
        x = _as_tensor(x, self.dtype)
        slope = self.config.slope
        h1 = T.leaky_relu(self.bn1(self.fc1(x), training), slope)
        h2 = T.leaky_relu(self.bn2(self.fc2(h1), training), slope)
        global_feat = T.scatter_aggregate(h2, g.batch_vector, g.num_graphs, "max")
        per_point = T.take_rows(global_feat, g.batch_vector)
        h = T.concat([h1, per_point], axis=1)
        h = T.leaky_relu(self.bn3(self.fc3(h), training), slope)
        h = dropout(h, self.config.dropout, rng, training)
        return self.head(h)


_MODELS = {
    "edgegat": EdgeGAT,
    "gcn": SimpleGCN,
    "gat": BaselineGAT,
    "gcn_unet": lambda c, r, d: GCNUNet(c, r, d, enhanced=False),
    "gcn_unet2": lambda c, r, d: GCNUNet(c, r, d, enhanced=True),
    "pointnet": PointNetSeg,
}


def build_model(config, seed_or_rng=0, dtype=np.float64):
    """Instantiate an architecture with freshly initialized parameters."""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else np.random.default_rng(seed_or_rng)
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError("model dtype must be float32 or float64")
    return _MODELS[config.architecture](config, rng, dtype)
