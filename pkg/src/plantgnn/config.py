"""Plain-text run configuration with a closed key schema.

Files hold one ``key = value`` pair per line ('#' starts a comment).
Keys mirror the ModelConfig and TrainConfig field names; anything else
is rejected. Precedence is command line > config file > defaults.
"""

from .errors import ConfigError
from .nn import ModelConfig
from .train import TrainConfig


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean: %r" % text)


MODEL_KEYS = {
    "architecture": str,
    "feature_set": str,
    "k_graph": int,
    "k_features": int,
    "num_classes": int,
    "dropout": float,
    "slope": float,
    "dynamic_knn": _parse_bool,
}

TRAIN_KEYS = {
    "lr": float,
    "epochs": int,
    "batch_size": int,
    "k_graph": int,
    "points_per_cloud": int,
    "seed": int,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "folds": int,
    "dtype": str,
    "timing": _parse_bool,
}

SCHEMA = {**TRAIN_KEYS, **MODEL_KEYS}


def load_config_file(path):
    """Parse a key=value file into a typed dict; unknown keys fail."""
    values = {}
    try:
        f = open(path)
    except OSError as exc:
        raise ConfigError("cannot read config file %s: %s" % (path, exc)) from None
    with f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, raw = text.partition("=")
            if not sep:
                raise ConfigError("%s:%d: expected key=value, got %r"
                                  % (path, lineno, text))
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError("%s:%d: unknown config key %r" % (path, lineno, key))
            try:
                values[key] = SCHEMA[key](raw.strip())
            except ValueError as exc:
                raise ConfigError("%s:%d: bad value for %s: %s"
                                  % (path, lineno, key, exc)) from None
    return values


def build_configs(file_values=None, overrides=None):
    """Merge defaults, config-file values and CLI overrides into
    (ModelConfig, TrainConfig)."""
    merged = {}
    merged.update(file_values or {})
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in SCHEMA:
            raise ConfigError("unknown config key %r" % key)
        merged[key] = val
    model_kwargs = {k: v for k, v in merged.items() if k in MODEL_KEYS}
    train_kwargs = {k: v for k, v in merged.items() if k in TRAIN_KEYS}
    try:
        return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
