"""Classifiers behind a shared train / predict / save / load contract."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ArgumentError, ContractError
from ..features import schema_hash
from ..seeding import derive_seed
from . import container, mlp as _mlp
from .config import CARTConfig, ETConfig, KNNConfig, MLPConfig, TrainConfig
from .knn import knn_vote
from .extra_trees import grow_extra_tree
from .trees import Tree, grow_tree, pack_trees, unpack_trees

KINDS = ("extra_trees", "mlp", "knn", "cart")
ALIASES = {"et": "extra_trees", "ann": "mlp", "rna": "mlp", "tree": "cart"}

__all__ = ["ModelArtifact", "TrainConfig", "ETConfig", "MLPConfig", "KNNConfig", "CARTConfig",
           "train", "train_extra_trees", "train_mlp", "train_knn", "train_cart", "predict",
           "save_model", "load_model", "gradient_check", "canonical_kind", "KINDS"]


def canonical_kind(kind: str) -> str:
    kind = ALIASES.get(kind.lower(), kind.lower())
    if kind not in KINDS:
        raise ArgumentError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    return kind


@dataclass(eq=False)
class ModelArtifact:
    kind: str
    params: dict
    state: dict
    classes: list
    feature_names: list
    seed: int
    schema_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.schema_hash:
            self.schema_hash = schema_hash(self.feature_names)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def header(self) -> dict:
        return {"kind": self.kind, "version": container.FORMAT_VERSION, "schema_hash": self.schema_hash,
                "seed": int(self.seed), "params": self.params, "classes": [int(c) for c in self.classes],
                "feature_names": list(self.feature_names), "extra": self.extra}

    def same_as(self, other: "ModelArtifact") -> bool:
        return (self.header() == other.header() and self.state.keys() == other.state.keys()
                and all(np.array_equal(self.state[k], other.state[k]) for k in self.state))


def _prepare(X, y, feature_names):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ArgumentError(f"X {X.shape} and y {y.shape} disagree")
    if X.shape[0] < 1:
        raise ArgumentError("empty training set")
    if not np.all(np.isfinite(X)):
        raise ArgumentError("training data contains non-finite values")
    classes, y_idx = np.unique(y, return_inverse=True)
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ArgumentError("feature_names length does not match X")
    return X, y_idx.ravel(), [int(c) if float(c).is_integer() else c for c in classes.tolist()], names


def train_extra_trees(X, y, cfg: ETConfig = ETConfig(), seed: int = 42, feature_names=None,
                      jobs: int = 1) -> ModelArtifact:
    """Extremely randomized trees grown on the full sample.

    Tree ``t`` draws from its own generator seeded by
    ``derive_seed(seed, "tree", t)``, so the forest does not depend on
    ``jobs``.
    """
    X, y_idx, classes, names = _prepare(X, y, feature_names)
    if cfg.bootstrap:
        raise ArgumentError("bootstrap sampling is not part of the extra-trees scheme")
    k = cfg.k_features or math.ceil(math.sqrt(X.shape[1]))
    k = min(k, X.shape[1])

    def grow(t):
        return grow_extra_tree(X, y_idx, len(classes), k, cfg.min_leaf, cfg.max_depth,
                               derive_seed(seed, "tree", t))

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            trees = list(pool.map(grow, range(cfg.n_trees)))
    else:
        trees = [grow(t) for t in range(cfg.n_trees)]
    params = asdict(cfg)
    params["k_features"] = k
    return ModelArtifact("extra_trees", params, pack_trees(trees), classes, names, seed)


def train_cart(X, y, cfg: CARTConfig = CARTConfig(), seed: int = 0, feature_names=None) -> ModelArtifact:
    X, y_idx, classes, names = _prepare(X, y, feature_names)
    tree = grow_tree(X, y_idx, len(classes), max_depth=cfg.max_depth, min_leaf=cfg.min_leaf)
    return ModelArtifact("cart", asdict(cfg), pack_trees([tree]), classes, names, seed)


def cart_importances(artifact: ModelArtifact) -> np.ndarray:
    return unpack_trees(artifact.state)[0].feature_importances(artifact.n_features)


def standardizer(X: np.ndarray):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


def train_mlp(X, y, cfg: MLPConfig = MLPConfig(), seed: int = 42, feature_names=None,
              X_val=None, y_val=None) -> ModelArtifact:
    """Standardize on the training rows, then fit the network.

    A validation set (explicit, or carved from the training rows when
    ``cfg.validation_fraction > 0``) enables early stopping.
    """
    X, y_idx, classes, names = _prepare(X, y, feature_names)
    if cfg.activation != "relu" or cfg.optimizer != "adam":
        raise ArgumentError("only relu activation and adam optimizer are implemented")
    rng = np.random.default_rng(derive_seed(seed, "mlp"))
    Xv = yv = None
    if X_val is not None:
        lookup = {c: i for i, c in enumerate(classes)}
        Xv, yv = np.asarray(X_val, dtype=np.float64), np.array([lookup[c] for c in np.asarray(y_val).tolist()])
    elif cfg.validation_fraction > 0:
        perm = np.random.default_rng(derive_seed(seed, "mlp-val")).permutation(X.shape[0])
        n_val = max(1, int(round(cfg.validation_fraction * X.shape[0])))
        val, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        Xv, yv, X, y_idx = X[val], y_idx[val], X[tr], y_idx[tr]
    mu, sd = standardizer(X)
    params, history = _mlp.fit((X - mu) / sd, y_idx, len(classes), hidden_units=cfg.hidden_units,
                               epochs=cfg.epochs, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                               rng=rng, X_val=None if Xv is None else (Xv - mu) / sd, y_val=yv,
                               patience=cfg.patience, weight_decay=cfg.weight_decay)
    state = dict(params)
    state["mean"], state["scale"] = mu, sd
    return ModelArtifact("mlp", asdict(cfg), state, classes, names, seed,
                         extra={"train_loss": history["train_loss"], "val_loss": history["val_loss"]})


def train_knn(X, y, cfg: KNNConfig = KNNConfig(), seed: int = 0, feature_names=None) -> ModelArtifact:
    X, y_idx, classes, names = _prepare(X, y, feature_names)
    if cfg.metric != "euclidean":
        raise ArgumentError("only the euclidean metric is implemented")
    if not 1 <= cfg.k <= X.shape[0]:
        raise ArgumentError(f"k={cfg.k} must lie in 1..{X.shape[0]}")
    return ModelArtifact("knn", asdict(cfg), {"X": X, "y": y_idx.astype(np.int64)}, classes, names, seed)


def train(kind: str, X, y, cfg: TrainConfig = TrainConfig(), feature_names=None, jobs: int = 1) -> ModelArtifact:
    kind = canonical_kind(kind)
    if kind == "extra_trees":
        return train_extra_trees(X, y, cfg.et, cfg.seed, feature_names, jobs)
    if kind == "mlp":
        return train_mlp(X, y, cfg.mlp, cfg.seed, feature_names)
    if kind == "knn":
        return train_knn(X, y, cfg.knn, cfg.seed, feature_names)
    return train_cart(X, y, cfg.cart, cfg.seed, feature_names)


def predict(artifact: ModelArtifact, X, schema) -> tuple:
    """Labels and class-probability matrix for the rows of ``X``.

    ``schema`` is the column-name list (or its hash) of ``X``; it must match
    the training schema. Labels are the argmax of the probabilities with
    ties going to the lowest class, except for KNN which applies its own
    distance-weighted tie-break first.
    """
    want = schema if isinstance(schema, str) else schema_hash(list(schema))
    if want != artifact.schema_hash:
        raise ContractError(f"input schema {want} does not match model schema {artifact.schema_hash}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != artifact.n_features:
        raise ContractError(f"expected {artifact.n_features} columns, got shape {X.shape}")
    n_classes = len(artifact.classes)
    s = artifact.state
    if artifact.kind in ("extra_trees", "cart"):
        trees = unpack_trees(s)
        proba = np.zeros((X.shape[0], n_classes))
        for t in trees:
            proba += t.predict_proba(X)
        proba /= len(trees)
        idx = np.argmax(proba, axis=1)
    elif artifact.kind == "mlp":
        Z = (X - s["mean"]) / s["scale"]
        proba = _mlp.forward({k: s[k] for k in _mlp.PARAM_NAMES}, Z)
        idx = np.argmax(proba, axis=1)
    elif artifact.kind == "knn":
        idx, proba = knn_vote(s["X"], s["y"], X, int(artifact.params["k"]), n_classes)
    else:
        raise ArgumentError(f"unknown model kind {artifact.kind!r}")
    labels = np.asarray(artifact.classes)[idx]
    return labels, proba


def save_model(artifact: ModelArtifact, path) -> None:
    container.write(path, artifact.header(), artifact.state)


def load_model(path) -> ModelArtifact:
    header, state = container.read(path)
    return ModelArtifact(header["kind"], header["params"], state, header["classes"], header["feature_names"],
                         header["seed"], header["schema_hash"], header.get("extra", {}))


def gradient_check(params, X, y, step: float = 1e-5) -> float:
    return _mlp.gradient_check(params, X, y, step)
