"""Loss, optimizer, metrics, cross-validation and the epoch loop.

The pipeline from raw labeled clouds to logits is: per-cloud centering
and max-radius scale normalization, 13-d featurization, feature-set
column selection, KNN graph construction, then the model. Geometry is
static during training, so features and graphs are computed once per
cloud and reused every epoch; only batch composition changes.
"""

import copy
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import report as report_mod
from . import tensor as T
from .cloud import NUM_CLASSES, normalize
from .errors import DivergenceError
from .geomfeat import featurize, select_features
from .graph import batch_graphs, knn_graph
from .nn import ModelConfig, build_model

CHECKPOINT_NAME = "model.ckpt"
CURVES_NAME = "curves.csv"


@dataclass
class TrainConfig:
    lr: float = 0.001
    epochs: int = 100
    batch_size: int = 8
    k_graph: int = 16
    points_per_cloud: int = 1024
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    folds: int = 5
    dtype: str = "float32"
    timing: bool = True  # off: epoch_seconds written as 0 for reproducible CSVs

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0, got %g" % self.lr)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2, got %d" % self.folds)
        if self.points_per_cloud < 1:
            raise ValueError("points_per_cloud must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64, got %r" % self.dtype)

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class MetricsReport:
    per_class_iou: np.ndarray
    miou: float
    accuracy: float
    macro_precision: float
    mean_loss: float
    epoch_time: float = 0.0

    def to_dict(self):
        return {
            "per_class_iou": [float(v) for v in self.per_class_iou],
            "miou": float(self.miou),
            "accuracy": float(self.accuracy),
            "macro_precision": float(self.macro_precision),
            "mean_loss": float(self.mean_loss),
            "epoch_time": float(self.epoch_time),
        }


def cross_entropy(logits, labels):
    """Mean over vertices of -log softmax(logits)[label], stabilized by
    per-row max subtraction."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ValueError("expected %d labels, got shape %s" % (n, labels.shape))
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError("label out of range [0, %d)" % c)
    z = T.add_const(logits, -logits.data.max(axis=1, keepdims=True))
    lse = T.log(T.sum(T.exp(z), axis=1))
    onehot = np.zeros((n, c), dtype=logits.data.dtype)
    onehot[np.arange(n), labels] = 1.0
    picked = T.sum(T.mul_const(z, onehot), axis=1)
    return T.mean(T.sub(lse, picked))


class Adam:
    """Standard bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params, config):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in optimizer")
        self.lr = config.lr
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            if p.grad is None:
                raise ValueError("parameter %r has no gradient; "
                                 "run backward before step" % p.name)
            g = p.grad
            m = self.m[p.name] = b1 * self.m[p.name] + (1.0 - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (1.0 - b2) * (g * g)
            mhat = m / (1.0 - b1 ** self.t)
            vhat = v / (1.0 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def confusion_matrix(truth, pred, num_classes=NUM_CLASSES):
    """Counts[t, p] of true class t predicted as p."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ValueError("truth and prediction lengths differ")
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (truth, pred), 1)
    return out


def metrics_from_confusion(cm, mean_loss=float("nan"), epoch_time=0.0):
    """IoU, accuracy and macro precision from a confusion matrix.

    A class absent from both truth and prediction scores IoU 1 (vacuous
    perfection); a class never predicted contributes 0 precision.
    """
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    union = tp + fp + fn
    iou = np.where(union > 0, tp / np.where(union > 0, union, 1.0), 1.0)
    predicted = tp + fp
    precision = np.where(predicted > 0, tp / np.where(predicted > 0, predicted, 1.0), 0.0)
    total = cm.sum()
    accuracy = tp.sum() / total if total > 0 else 0.0
    return MetricsReport(
        per_class_iou=iou,
        miou=float(iou.mean()),
        accuracy=float(accuracy),
        macro_precision=float(precision.mean()),
        mean_loss=float(mean_loss),
        epoch_time=float(epoch_time),
    )


@dataclass
class PreparedCloud:
    """A cloud after normalization, featurization and graph building."""
    features: np.ndarray
    topology: object
    labels: np.ndarray


def prepare_cloud(model_config, cloud, dtype=np.float64):
    pts, _, _ = normalize(cloud.points)
    feats = select_features(featurize(pts, model_config.k_features),
                            model_config.feature_set).astype(dtype)
    topo = knn_graph(pts, model_config.k_graph)
    labels = getattr(cloud, "labels", None)
    return PreparedCloud(feats, topo, labels)


def prepare_dataset(model_config, clouds, dtype=np.float64):
    return [prepare_cloud(model_config, c, dtype) for c in clouds]


def _evaluate_prepared(model, prepared):
    t0 = time.perf_counter()
    cm = np.zeros((model.config.num_classes,) * 2, dtype=np.int64)
    nll_sum = 0.0
    n_total = 0
    with T.no_grad():
        for item in prepared:
            logits = model.forward(item.features, item.topology, training=False)
            loss = cross_entropy(logits, item.labels)
            n = item.labels.shape[0]
            nll_sum += float(loss.data) * n
            n_total += n
            pred = np.argmax(logits.data, axis=1)
            cm += confusion_matrix(item.labels, pred, model.config.num_classes)
    return metrics_from_confusion(cm, mean_loss=nll_sum / n_total,
                                  epoch_time=time.perf_counter() - t0)


def evaluate(model, dataset):
    """MetricsReport over labeled clouds, dropout off, pooled confusion
    matrix across the whole dataset."""
    if not dataset:
        raise ValueError("evaluate needs a non-empty dataset")
    if any(getattr(c, "labels", None) is None for c in dataset):
        raise ValueError("evaluate needs labeled clouds")
    return _evaluate_prepared(model, prepare_dataset(model.config, dataset,
                                                     model.dtype))


def save_checkpoint(path, model_config, state_arrays, seed, extra=None):
    manifest = model_config.manifest()
    manifest["seed"] = str(seed)
    manifest["hidden"] = "64"
    manifest["heads"] = "4"
    if extra:
        manifest.update(extra)
    T.save_arrays(path, state_arrays, manifest)


def load_checkpoint(path, dtype=np.float32):
    """Rebuild a model from a checkpoint; returns (model, manifest)."""
    manifest, arrays = T.load_arrays(path)
    config = ModelConfig.from_manifest(manifest)
    model = build_model(config, int(manifest.get("seed", "0")), dtype)
    model.load_state(arrays)
    return model, manifest


@dataclass
class TrainResult:
    model: object
    best_report: MetricsReport
    final_report: MetricsReport
    best_epoch: int
    curves: list = field(default_factory=list)
    checkpoint_path: str = ""
    curves_path: str = ""


def _merge_prepared(prepared):
    """One disjoint-union PreparedCloud, so evaluation runs in one forward."""
    if len(prepared) == 1:
        return prepared[0]
    topo, feats, labels = batch_graphs([p.topology for p in prepared],
                                       [p.features for p in prepared],
                                       [p.labels for p in prepared])
    return PreparedCloud(feats, topo, labels)


def train_loop(model_config, train_config, train_clouds, val_clouds=None,
               out_dir=None):
    """Train one model; returns the TrainResult and, when out_dir is set,
    writes the curves CSV, a rendered curves figure, and the checkpoint
    of the best-validation-mIoU epoch.

    Validation defaults to the training clouds themselves (overfit
    monitoring) when no held-out clouds are given. Each optimizer step
    covers batch_size clouds; the clouds run one at a time and their
    gradients accumulate with vertex-count weights, so the step follows
    the loss over the whole batch while the live graph stays one cloud.
    """
    rng = np.random.default_rng(train_config.seed)
    dtype = train_config.np_dtype()
    model = build_model(model_config, rng, dtype)
    prepared = prepare_dataset(model_config, train_clouds, dtype)
    prepared_val = prepared if val_clouds is None \
        else prepare_dataset(model_config, val_clouds, dtype)
    eval_set = [_merge_prepared(prepared_val)]
    adam = Adam(model.parameters(), train_config)

    curves = []
    best_state, best_report, best_epoch = None, None, -1
    final_report = None
    for epoch in range(1, train_config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(prepared))
        loss_sum, n_sum = 0.0, 0
        for lo in range(0, len(order), train_config.batch_size):
            batch = [prepared[i] for i in order[lo:lo + train_config.batch_size]]
            n_batch = sum(item.labels.shape[0] for item in batch)
            adam.zero_grad()
            for item in batch:
                logits = model.forward(item.features, item.topology,
                                       training=True, rng=rng)
                loss = cross_entropy(logits, item.labels)
                if not np.isfinite(loss.data):
                    raise DivergenceError(
                        "non-finite loss at epoch %d (lr=%g); training aborted"
                        % (epoch, train_config.lr))
                n = item.labels.shape[0]
                T.backward(T.smul(loss, n / n_batch))
                loss_sum += float(loss.data) * n
                n_sum += n
            adam.step()
        val_report = _evaluate_prepared(model, eval_set)
        final_report = val_report
        seconds = time.perf_counter() - t0 if train_config.timing else 0.0
        curves.append((epoch, loss_sum / n_sum, val_report.mean_loss,
                       val_report.miou, val_report.accuracy, seconds))
        if best_report is None or val_report.miou > best_report.miou:
            best_state = copy.deepcopy(model.state_arrays())
            best_report, best_epoch = val_report, epoch

    result = TrainResult(model, best_report, final_report, best_epoch, curves)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.curves_path = os.path.join(out_dir, CURVES_NAME)
        report_mod.write_curves_csv(result.curves_path, curves)
        report_mod.render_curves(os.path.join(out_dir, "curves.png"), curves)
        result.checkpoint_path = os.path.join(out_dir, CHECKPOINT_NAME)
        save_checkpoint(result.checkpoint_path, model_config, best_state,
                        train_config.seed, extra={"best_epoch": str(best_epoch)})
        with open(os.path.join(out_dir, "metrics.json"), "w") as f:
            json.dump({"best": best_report.to_dict(), "best_epoch": best_epoch,
                       "final": final_report.to_dict()}, f, indent=2)
            f.write("\n")
    return result


def kfold_split(n, folds, rng):
    """Seeded partition into `folds` near-equal index sets."""
    parts = np.array_split(rng.permutation(n), folds)
    return [np.sort(p) for p in parts]


@dataclass
class KFoldResult:
    fold_reports: list
    final_reports: list
    aggregate: MetricsReport
    fold_indices: list


def kfold_run(dataset, model_config, train_config, out_dir=None):
    """Cross-validation per the training recipe: each fold serves once
    as the validation set; per-fold metrics come from the best epoch and
    the aggregate is their arithmetic mean."""
    n = len(dataset)
    if n < train_config.folds:
        raise ValueError("need at least %d clouds for %d folds, got %d"
                         % (train_config.folds, train_config.folds, n))
    rng = np.random.default_rng(train_config.seed)
    fold_indices = kfold_split(n, train_config.folds, rng)
    fold_reports, final_reports = [], []
    for f, val_idx in enumerate(fold_indices):
        val_set = set(val_idx.tolist())
        train_clouds = [dataset[i] for i in range(n) if i not in val_set]
        val_clouds = [dataset[i] for i in val_idx]
        sub_dir = None if out_dir is None else os.path.join(out_dir, "fold_%d" % f)
        result = train_loop(model_config, train_config, train_clouds,
                            val_clouds, sub_dir)
        fold_reports.append(result.best_report)
        final_reports.append(result.final_report)

    aggregate = MetricsReport(
        per_class_iou=np.mean([r.per_class_iou for r in fold_reports], axis=0),
        miou=float(np.mean([r.miou for r in fold_reports])),
        accuracy=float(np.mean([r.accuracy for r in fold_reports])),
        macro_precision=float(np.mean([r.macro_precision for r in fold_reports])),
        mean_loss=float(np.mean([r.mean_loss for r in fold_reports])),
        epoch_time=float(np.mean([r.epoch_time for r in fold_reports])),
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        payload = {"folds": [r.to_dict() for r in fold_reports],
                   "final_epoch": [r.to_dict() for r in final_reports],
                   "aggregate": aggregate.to_dict()}
        with open(os.path.join(out_dir, "kfold.json"), "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
        report_mod.render_kfold(os.path.join(out_dir, "kfold.png"),
                                [r.miou for r in fold_reports], aggregate.miou)
    return KFoldResult(fold_reports, final_reports, aggregate,
                       [idx.tolist() for idx in fold_indices])
