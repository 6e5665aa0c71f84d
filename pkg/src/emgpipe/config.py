"""Pipeline configuration: nested defaults, file loading and overrides.

Precedence, lowest to highest: built-in defaults, the YAML/JSON config
file, ``--set key.path=value`` pairs, then dedicated command-line flags.
Every key is typed by its default; unknown keys and type mismatches raise
:class:`ConfigError` naming the dotted path.
"""
import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Optional

import yaml

from .dataset import CsvSchema, SyntheticSpec
from .errors import ArgumentError, ConfigError
from .features import WindowSpec
from .models import CARTConfig, ETConfig, KNNConfig, MLPConfig, TrainConfig, canonical_kind
from .preprocess import PreprocessConfig

STAGE_ORDER_ALIASES = {"filter_first": "filter_then_envelope", "envelope_first": "envelope_then_filter"}

# keys whose default is None but that accept a value of the listed types
_NULLABLE = {
    "output_dir": (str,),
    "dataset.synthetic.seed": (int,),
    "dataset.synthetic.activation_profile": (list,),
    "dataset.subject_ids": (list,),
    "preprocess.notch_hz": (int, float),
    "models.et.k_features": (int,),
    "models.et.max_depth": (int,),
    "models.cart.max_depth": (int,),
    "selection.max_depth": (int,),
}


def _synthetic_defaults() -> dict:
    d = SyntheticSpec().to_dict()
    d["seed"] = None  # falls back to the master seed
    return d


DEFAULTS = {
    "seed": 42,
    "output_dir": None,
    "dataset": {
        "source": "synthetic",
        "paths": [],
        "format": "auto",
        "sample_rate_hz": 2000.0,
        "subject_ids": None,
        "csv": {"stimulus": "stimulus", "repetition": "repetition", "channel_prefix": "ch"},
        "synthetic": _synthetic_defaults(),
    },
    "preprocess": PreprocessConfig().to_dict(),
    "features": {"window_ms": 200.0, "include_rest": True},
    "task": {"gestures": "all"},
    "clustering": {"k": 6, "ridge_lambda": 1e-6},
    "selection": {"mi_min": 0.1, "importance_min": 0.01, "retain_ratio": 0.85, "n_bins": 10,
                  "unit": "family", "replication": False, "target_units": 12, "drop_channels": 2,
                  "max_depth": None, "min_leaf": 1, "apply": False},
    "models": {"train": ["extra_trees"], "et": ETConfig().__dict__.copy(), "mlp": MLPConfig().__dict__.copy(),
               "knn": KNNConfig().__dict__.copy(), "cart": CARTConfig().__dict__.copy()},
    "evaluation": {"folds": 10, "split_mode": "repetition", "compare": ["extra_trees", "mlp", "knn"],
                   "windows_ms": [100.0, 200.0, 300.0], "window_model": "knn",
                   "learning_curve": {"enabled": True, "fractions": [0.2, 0.4, 0.6, 0.8, 1.0], "repeats": 3}},
}


def _type_ok(value, default, path: str) -> bool:
    if default is None:
        return value is None or isinstance(value, _NULLABLE.get(path, ())) and not isinstance(value, bool)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        # task.gestures also takes an explicit list
        return isinstance(value, str) or (path == "task.gestures" and isinstance(value, list))
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def merge(base: dict, update: dict, prefix: str = "") -> dict:
    """Typed deep merge of ``update`` into a copy of ``base``."""
    out = copy.deepcopy(base)
    if not isinstance(update, dict):
        raise ConfigError(f"{prefix or '<root>'}: expected a mapping, got {type(update).__name__}")
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"{path}: unknown configuration key")
        default = base[key]
        if isinstance(default, dict):
            out[key] = merge(default, value, path + ".")
            continue
        value = _coerce_number(value, default)
        if not _type_ok(value, default, path):
            raise ConfigError(f"{path}: expected {type(default).__name__ if default is not None else 'null'}"
                              f", got {value!r}")
        out[key] = float(value) if isinstance(default, float) else value
    return out


def _coerce_number(value, default):
    # YAML 1.1 reads 1e-3 (no dot) as a string
    if isinstance(value, str) and isinstance(default, float):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def parse_assignment(text: str) -> dict:
    """``a.b.c=value`` -> nested dict, with ``value`` parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"{key}: cannot parse value {raw!r}: {exc}") from None
    node: Any = value
    for part in reversed(key.strip().split(".")):
        node = {part: node}
    return node


def load_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return data or {}


def build(config_file=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if config_file is not None:
        cfg = merge(cfg, load_file(config_file))
    for ov in overrides:
        cfg = merge(cfg, ov if isinstance(ov, dict) else parse_assignment(ov))
    validate(cfg)
    return cfg


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


# -- typed views

def _wrap(path: str, fn):
    try:
        return fn()
    except (ArgumentError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    d = dict(cfg["dataset"]["synthetic"])
    if d["seed"] is None:
        d["seed"] = cfg["seed"]
    spec = _wrap("dataset.synthetic", lambda: SyntheticSpec(**d))
    _wrap("dataset.synthetic", spec.validate)
    return spec


def csv_schema(cfg: dict) -> CsvSchema:
    return CsvSchema(**cfg["dataset"]["csv"])


def preprocess_config(cfg: dict) -> PreprocessConfig:
    d = dict(cfg["preprocess"])
    d["stage_order"] = STAGE_ORDER_ALIASES.get(d["stage_order"], d["stage_order"])
    pc = _wrap("preprocess", lambda: PreprocessConfig(**d))
    _wrap("preprocess", pc.validate)
    return pc


def window_spec(cfg: dict) -> WindowSpec:
    return _wrap("features.window_ms", lambda: WindowSpec(float(cfg["features"]["window_ms"])))


def train_config(cfg: dict) -> TrainConfig:
    m = cfg["models"]
    return _wrap("models", lambda: TrainConfig(ETConfig(**m["et"]), MLPConfig(**m["mlp"]), KNNConfig(**m["knn"]),
                                               CARTConfig(**m["cart"]), cfg["seed"]))


def validate(cfg: dict) -> None:
    """Cross-field checks that the typed merge cannot express."""
    ds = cfg["dataset"]
    if ds["source"] not in ("synthetic", "files"):
        raise ConfigError("dataset.source: expected 'synthetic' or 'files'")
    if ds["format"] not in ("auto", "csv", "mat"):
        raise ConfigError("dataset.format: expected 'auto', 'csv' or 'mat'")
    preprocess_config(cfg)
    fs = ds["synthetic"]["sample_rate_hz"] if ds["source"] == "synthetic" else ds["sample_rate_hz"]
    _wrap("features.window_ms", lambda: window_spec(cfg).samples(fs))
    if cfg["clustering"]["k"] < 1:
        raise ConfigError("clustering.k: must be >= 1")
    sel = cfg["selection"]
    if sel["unit"] not in ("family", "column"):
        raise ConfigError("selection.unit: expected 'family' or 'column'")
    if not 0 < sel["retain_ratio"] <= 1:
        raise ConfigError("selection.retain_ratio: must lie in (0, 1]")
    if sel["n_bins"] < 2:
        raise ConfigError("selection.n_bins: must be >= 2")
    g = cfg["task"]["gestures"]
    if isinstance(g, str) and g not in ("all", "representatives"):
        raise ConfigError("task.gestures: expected 'all', 'representatives' or a list of labels")
    if isinstance(g, list) and not all(isinstance(a, int) and not isinstance(a, bool) for a in g):
        raise ConfigError("task.gestures: list entries must be integers")
    ev = cfg["evaluation"]
    if ev["folds"] < 2:
        raise ConfigError("evaluation.folds: must be >= 2")
    if ev["split_mode"] not in ("window", "repetition"):
        raise ConfigError("evaluation.split_mode: expected 'window' or 'repetition'")
    for path, kinds in (("models.train", cfg["models"]["train"]), ("evaluation.compare", ev["compare"]),
                        ("evaluation.window_model", [ev["window_model"]])):
        for k in kinds:
            _wrap(path, lambda: canonical_kind(str(k)))
    tc = train_config(cfg)
    for name, val in (("models.et.n_trees", tc.et.n_trees), ("models.mlp.hidden_units", tc.mlp.hidden_units),
                      ("models.mlp.epochs", tc.mlp.epochs), ("models.mlp.batch_size", tc.mlp.batch_size),
                      ("models.knn.k", tc.knn.k), ("models.et.min_leaf", tc.et.min_leaf)):
        if val < 1:
            raise ConfigError(f"{name}: must be positive")
    if tc.mlp.learning_rate <= 0:
        raise ConfigError("models.mlp.learning_rate: must be positive")
    lc = ev["learning_curve"]
    fr = lc["fractions"]
    if not fr or any(not (0 < f <= 1) for f in fr) or any(b <= a for a, b in zip(fr, fr[1:])):
        raise ConfigError("evaluation.learning_curve.fractions: must increase strictly within (0, 1]")
    if cfg["dataset"]["source"] == "synthetic":
        synthetic_spec(cfg)
