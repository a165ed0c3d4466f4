"""Command-line pipeline: featurize, train, kfold, eval, predict, synth.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 training divergence.
"""

import argparse
import json
import os
import sys

import numpy as np

from .cloud import (LabeledCloud, downsample, read_ply, read_xyz, synth_dataset,
                    write_ply, write_xyz)
from .config import build_configs, load_config_file
from .errors import ConfigError, DataError, DivergenceError
from .geomfeat import featurize, select_features, write_feature_csv
from .nn import ARCHITECTURES, ModelConfig
from .train import (evaluate, kfold_run, load_checkpoint, prepare_cloud,
                    train_loop)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits 2 by default; usage problems belong to exit code 1
        raise ConfigError(message)


def _add_common(p):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--arch", choices=ARCHITECTURES, help="model architecture")
    p.add_argument("--feature-set", dest="feature_set",
                   help="XYZ, XYZ-N, XYZ-NC or XYZ-NCLPSOAE")
    p.add_argument("--k", type=int, help="graph neighbourhood size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--points", type=int, help="points per cloud after downsampling")


def _overrides(args):
    return {
        "seed": getattr(args, "seed", None),
        "architecture": getattr(args, "arch", None),
        "feature_set": getattr(args, "feature_set", None),
        "k_graph": getattr(args, "k", None),
        "epochs": getattr(args, "epochs", None),
        "lr": getattr(args, "lr", None),
        "batch_size": getattr(args, "batch_size", None),
        "points_per_cloud": getattr(args, "points", None),
    }


def _configs(args):
    file_values = load_config_file(args.config) if args.config else {}
    return build_configs(file_values, _overrides(args))


def _read_cloud(path):
    try:
        if path.endswith(".ply"):
            return read_ply(path)
        return read_xyz(path)
    except OSError as exc:
        raise DataError("cannot read %s: %s" % (path, exc)) from None


def _load_labeled(path, points=None, seed=0):
    """Labeled clouds from a file or directory, downsampled to `points`
    when given and the cloud is larger."""
    if os.path.isdir(path):
        names = sorted(f for f in os.listdir(path) if f.endswith((".xyz", ".ply")))
        paths = [os.path.join(path, f) for f in names]
        if not paths:
            raise DataError("no .xyz or .ply files in %s" % path)
    else:
        paths = [path]
    rng = np.random.default_rng(seed)
    clouds = []
    for p in paths:
        c = _read_cloud(p)
        if not isinstance(c, LabeledCloud):
            raise DataError("%s has no labels" % p)
        if points is not None and len(c) > points:
            c = downsample(c, points, rng)
        clouds.append(c)
    return clouds


def _check_manifest(args, config):
    """Refuse explicit flags that contradict a checkpoint manifest."""
    for flag, value, actual in (
            ("--arch", getattr(args, "arch", None), config.architecture),
            ("--feature-set", getattr(args, "feature_set", None), config.feature_set),
            ("--k", getattr(args, "k", None), config.k_graph)):
        if value is not None and value != actual:
            raise ConfigError("%s %s conflicts with checkpoint (%s)"
                              % (flag, value, actual))


def cmd_featurize(args):
    cloud = _read_cloud(getattr(args, "in"))
    k = args.k_features if args.k_features is not None else 16
    feature_set = args.feature_set or "XYZ-NCLPSOAE"
    try:
        feats = select_features(featurize(cloud.points, k), feature_set)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    write_feature_csv(args.out, feats, getattr(cloud, "labels", None))
    print("wrote %s: %d rows, %d feature columns"
          % (args.out, feats.shape[0], feats.shape[1]))
    return 0


def cmd_train(args):
    model_cfg, train_cfg = _configs(args)
    clouds = _load_labeled(args.data, train_cfg.points_per_cloud, train_cfg.seed)
    result = train_loop(model_cfg, train_cfg, clouds, out_dir=args.out)
    print(json.dumps({"best_epoch": result.best_epoch,
                      "best": result.best_report.to_dict(),
                      "final": result.final_report.to_dict()}, indent=2))
    return 0


def cmd_kfold(args):
    model_cfg, train_cfg = _configs(args)
    if args.folds is not None:
        if args.folds < 2:
            raise ConfigError("--folds must be >= 2")
        train_cfg.folds = args.folds
    clouds = _load_labeled(args.data, train_cfg.points_per_cloud, train_cfg.seed)
    try:
        result = kfold_run(clouds, model_cfg, train_cfg, out_dir=args.out)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    print(json.dumps({"folds": [r.to_dict() for r in result.fold_reports],
                      "aggregate": result.aggregate.to_dict()}, indent=2))
    return 0


def _load_model(args):
    try:
        model, manifest = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise DataError("cannot read checkpoint %s: %s" % (args.checkpoint, exc)) from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _check_manifest(args, model.config)
    return model, manifest


def cmd_eval(args):
    model, _ = _load_model(args)
    clouds = _load_labeled(args.data, getattr(args, "points", None),
                           args.seed if args.seed is not None else 0)
    report = evaluate(model, clouds)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_predict(args):
    model, _ = _load_model(args)
    cloud = _read_cloud(getattr(args, "in"))
    try:
        item = prepare_cloud(model.config, cloud, model.dtype)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    from . import tensor as T
    with T.no_grad():
        logits = model.forward(item.features, item.topology, training=False)
    pred = np.argmax(logits.data, axis=1).astype(np.int64)
    write_ply(args.out, LabeledCloud(cloud.points, pred))
    print("wrote %s: %d points" % (args.out, len(pred)))
    return 0


def cmd_synth(args):
    if args.count <= 0:
        raise ConfigError("--count must be positive, got %d" % args.count)
    points = args.points if args.points is not None else 1024
    seed = args.seed if args.seed is not None else 0
    os.makedirs(args.out, exist_ok=True)
    clouds = synth_dataset(args.count, points, seed, args.noise)
    for i, c in enumerate(clouds):
        write_xyz(os.path.join(args.out, "cloud_%03d.xyz" % i), c)
    print("wrote %d clouds of %d points to %s" % (args.count, points, args.out))
    return 0


def _build_parser():
    parser = _Parser(prog="plantgnn",
                     description="Graph neural segmentation of plant point "
                                 "clouds into soil, stem and leaf.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("featurize", help="dump per-point geometric features as CSV")
    p.add_argument("--in", required=True, help="input cloud (.xyz or .ply)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--k-features", dest="k_features", type=int,
                   help="neighbourhood size for PCA features (default 16)")
    _add_common(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train one model on a directory of clouds")
    p.add_argument("--data", required=True, help="labeled cloud file or directory")
    p.add_argument("--out", help="output directory (curves, figure, checkpoint)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("kfold", help="cross-validate on a directory of clouds")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="output directory")
    p.add_argument("--folds", type=int, help="number of folds (default 5)")
    _add_common(p)
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled clouds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment a cloud and write a colored PLY")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", required=True, help="input cloud (.xyz or .ply)")
    p.add_argument("--out", required=True, help="output PLY path")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate synthetic labeled plant scenes")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--noise", type=float, default=0.01)
    _add_common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except DataError as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print("training diverged: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
