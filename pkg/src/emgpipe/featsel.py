"""Hybrid feature selection: rank-binned mutual information, correlation PCA,
CART Gini importances and a channel-level ranking.

Selection can run per column or per feature family (all channel columns of
one attribute, e.g. ``RMS`` or ``mDWT``). The family view aggregates column
MI by its mean and column importance by its sum.
"""
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ArgumentError, DegenerateError, SelectionError
from .features import FeatureTable
from .models import CARTConfig, cart_importances, train_cart


# -- mutual information

def equal_frequency_bins(x, n_bins: int) -> np.ndarray:
    """Bin index 0..n_bins-1 from average ranks; tied values share a bin."""
    x = np.asarray(x, dtype=np.float64).ravel()
    r = rankdata(x, method="average")
    return np.minimum(((r - 0.5) * n_bins / x.size).astype(np.int64), n_bins - 1)


def mi_from_counts(joint) -> tuple:
    """``(I(F;L), H(L))`` in nats from a contingency table (rows F, columns L)."""
    P = np.asarray(joint, dtype=np.float64)
    P = P / P.sum()
    pf = P.sum(axis=1, keepdims=True)
    pl = P.sum(axis=0, keepdims=True)
    nz = P > 0
    mi = float(np.sum(P[nz] * np.log(P[nz] / (pf @ pl)[nz])))
    pl = pl[pl > 0]
    return max(mi, 0.0), float(-np.sum(pl * np.log(pl)))


def mutual_information(feature, labels, n_bins: int = 10) -> float:
    """Normalized MI ``I(F;L) / H(L)`` with ``F`` cut into equal-frequency bins."""
    if n_bins < 2:
        raise ArgumentError("n_bins must be >= 2")
    feature = np.asarray(feature, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if feature.size != labels.size or feature.size == 0:
        raise ArgumentError("feature and labels must be non-empty and of equal length")
    classes, li = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise ArgumentError("mutual information needs at least 2 distinct labels")
    fb = equal_frequency_bins(feature, n_bins)
    joint = np.zeros((n_bins, len(classes)))
    np.add.at(joint, (fb, li.ravel()), 1.0)
    mi, h = mi_from_counts(joint)
    return float(min(max(mi / h, 0.0), 1.0))


# -- PCA

@dataclass(frozen=True, eq=False)
class PCAResult:
    components: np.ndarray            # d x m, orthonormal columns
    explained_variance_ratio: np.ndarray  # m retained ratios
    all_variance_ratio: np.ndarray    # d ratios, sum 1
    n_retained: int
    scores: np.ndarray                # n x m
    mean: np.ndarray
    scale: np.ndarray

    def to_dict(self, names: Optional[Sequence[str]] = None) -> dict:
        return {"n_retained": self.n_retained,
                "explained_variance_ratio": self.all_variance_ratio.tolist(),
                "cumulative_ratio": np.cumsum(self.all_variance_ratio).tolist(),
                "feature_names": list(names) if names is not None else None,
                "components": self.components.tolist()}


def pca(matrix, retain_ratio: float = 0.85, names: Optional[Sequence[str]] = None) -> PCAResult:
    """Eigen-decomposition of the correlation matrix of ``matrix`` (n x d).

    ``m`` is the smallest count whose cumulative ratio reaches
    ``retain_ratio``; each component is signed so its largest-magnitude
    loading is positive.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
        raise ArgumentError(f"pca needs an n x d matrix with n >= 2, got {X.shape}")
    if not 0 < retain_ratio <= 1:
        raise ArgumentError("retain_ratio must lie in (0, 1]")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    zero = np.flatnonzero(~(sd > 0))
    if zero.size:
        j = int(zero[0])
        label = names[j] if names is not None else f"column {j}"
        raise DegenerateError(f"zero-variance column {label} must be removed before PCA")
    Z = (X - mu) / sd
    C = Z.T @ Z / X.shape[0]
    ev, vec = np.linalg.eigh(0.5 * (C + C.T))
    order = np.argsort(-ev, kind="stable")
    ev, vec = np.clip(ev[order], 0.0, None), vec[:, order]
    for j in range(vec.shape[1]):
        if vec[np.argmax(np.abs(vec[:, j])), j] < 0:
            vec[:, j] = -vec[:, j]
    ratio = ev / ev.sum()
    cum = np.cumsum(ratio)
    m = int(min(np.searchsorted(cum, retain_ratio - 1e-12) + 1, len(ratio)))
    comps = vec[:, :m]
    return PCAResult(comps, ratio[:m], ratio, m, Z @ comps, mu, sd)


# -- CART

def cart_train(X, labels, max_depth: Optional[int] = None, min_leaf: int = 1, feature_names=None):
    """``(artifact, importances)``; a single-class input gives a stump with zero importances."""
    art = train_cart(X, labels, CARTConfig(max_depth=max_depth, min_leaf=min_leaf), feature_names=feature_names)
    return art, cart_importances(art)


# -- per-class summaries

def five_number_summary(x) -> dict:
    """Quartiles plus Tukey whiskers (most extreme points within 1.5 IQR)."""
    x = np.asarray(x, dtype=np.float64)
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    return {"lower_whisker": float(inside.min()), "q1": float(q1), "median": float(med),
            "q3": float(q3), "upper_whisker": float(inside.max())}


def class_summaries(table: FeatureTable, labels=None) -> list:
    labels = table.gesture if labels is None else np.asarray(labels)
    rows = []
    for j, name in enumerate(table.columns):
        for c in np.unique(labels):
            rows.append({"column": name, "label": int(c), **five_number_summary(table.values[labels == c, j])})
    return rows


def summaries_csv(rows: list) -> str:
    keys = ("column", "label", "lower_whisker", "q1", "median", "q3", "upper_whisker")
    return ",".join(keys) + "\n" + "".join(",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k])
                                                     for k in keys) + "\n" for r in rows)


# -- hybrid selection

@dataclass(eq=False)
class SelectionReport:
    unit: str
    thresholds: dict
    removed_degenerate: list
    mi: dict                     # unit name -> normalized MI
    importance: dict             # unit name -> Gini importance (MI survivors only)
    mi_survivors: list
    importance_survivors: list
    pca: dict
    channel_scores: dict
    dropped_channels: list
    final_set: list              # (column, family, channel)
    summaries: list = field(default_factory=list)

    @property
    def final_families(self) -> list:
        return list(dict.fromkeys(f for _, f, _ in self.final_set))

    @property
    def final_columns(self) -> list:
        return [c for c, _, _ in self.final_set]

    def to_dict(self) -> dict:
        return {"unit": self.unit, "thresholds": self.thresholds, "removed_degenerate": self.removed_degenerate,
                "mi_normalized": self.mi, "gini_importance": self.importance,
                "mi_survivors": self.mi_survivors, "importance_survivors": self.importance_survivors,
                "pca": self.pca, "channel_scores": {str(k): v for k, v in self.channel_scores.items()},
                "dropped_channels": self.dropped_channels,
                "final_families": self.final_families,
                "final_set": [{"column": c, "family": f, "channel": ch} for c, f, ch in self.final_set]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def final_set_csv(self) -> str:
        return "column,family,channel\n" + "".join(f"{c},{f},{ch}\n" for c, f, ch in self.final_set)


def _degenerate_columns(table: FeatureTable, max_flag_fraction: float) -> list:
    V = table.values
    constant = ~(V.max(axis=0) > V.min(axis=0))
    flagged = table.flags.mean(axis=0) > max_flag_fraction if table.n_rows else np.zeros(V.shape[1], bool)
    return [j for j in range(V.shape[1]) if constant[j] or flagged[j]]


def hybrid_select(table: FeatureTable, labels=None, mi_min: Optional[float] = 0.1,
                  importance_min: float = 0.01, retain_ratio: float = 0.85, *, n_bins: int = 10,
                  unit: str = "family", replication: bool = False, target_units: int = 12,
                  drop_channels: int = 2, max_depth: Optional[int] = None, min_leaf: int = 1,
                  max_flag_fraction: float = 0.05, with_summaries: bool = True) -> SelectionReport:
    """Filter columns by MI, report PCA, filter by CART importance, drop weak channels.

    With ``replication`` the MI threshold is set to the ``target_units``-th
    largest unit score so that exactly that many units (ties included)
    survive the MI step.
    """
    if unit not in ("family", "column"):
        raise ArgumentError(f"unit must be 'family' or 'column', got {unit!r}")
    labels = table.gesture if labels is None else np.asarray(labels)
    thresholds = {"mi_min": mi_min, "importance_min": importance_min, "retain_ratio": retain_ratio,
                  "n_bins": n_bins, "replication": replication, "target_units": target_units,
                  "drop_channels": drop_channels}

    # (1) degenerate columns
    bad = _degenerate_columns(table, max_flag_fraction)
    removed = [table.columns[j] for j in bad]
    work = table.take_columns([j for j in range(len(table.columns)) if j not in set(bad)])
    if not work.columns:
        raise SelectionError("every column is constant or flagged", {"removed_degenerate": removed})
    unit_of = list(work.families) if unit == "family" else list(work.columns)
    units = list(dict.fromkeys(unit_of))

    # (2) mutual information
    col_mi = np.array([mutual_information(work.values[:, j], labels, n_bins) for j in range(len(work.columns))])
    mi = {u: float(np.mean([col_mi[j] for j in range(len(unit_of)) if unit_of[j] == u])) for u in units}
    if replication:
        ranked = sorted(mi.values(), reverse=True)
        mi_min = ranked[min(target_units, len(ranked)) - 1]
        thresholds["mi_min"] = mi_min
    mi_keep = [u for u in units if mi[u] >= mi_min]
    if not mi_keep:
        raise SelectionError(f"no {unit} reaches mi_min={mi_min}", {"mi": mi})
    cols2 = [j for j in range(len(unit_of)) if unit_of[j] in set(mi_keep)]
    stage2 = work.take_columns(cols2)

    # (3) PCA report
    pca_res = pca(stage2.values, retain_ratio, stage2.columns)

    # (4) CART importances
    _, col_imp = cart_train(stage2.values, labels, max_depth, min_leaf, stage2.columns)
    unit2 = [unit_of[j] for j in cols2]
    importance = {u: float(sum(col_imp[i] for i in range(len(unit2)) if unit2[i] == u)) for u in mi_keep}
    imp_keep = [u for u in mi_keep if importance[u] >= importance_min]
    if not imp_keep:
        raise SelectionError(f"no {unit} reaches importance_min={importance_min}",
                             {"mi": mi, "importance": importance})

    # (5) channel ranking on the MI survivors
    chans = np.array(stage2.channels)
    per_channel = sorted(set(chans[chans > 0].tolist()))
    scores = {}
    if per_channel:
        idx = np.flatnonzero(chans > 0)
        r_mi = rankdata(-col_mi[cols2][idx], method="average")
        r_imp = rankdata(-col_imp[idx], method="average")
        mean_rank = 0.5 * (r_mi + r_imp)
        scores = {int(c): float(mean_rank[chans[idx] == c].mean()) for c in per_channel}
    if drop_channels < 0 or (per_channel and drop_channels >= len(per_channel)):
        raise ArgumentError(f"cannot drop {drop_channels} of {len(per_channel)} channels")
    worst_first = sorted(scores, key=lambda c: (-scores[c], -c))
    dropped = sorted(worst_first[:drop_channels])

    final = [(c, f, ch) for c, f, ch, u in zip(stage2.columns, stage2.families, stage2.channels, unit2)
             if u in set(imp_keep) and ch not in set(dropped)]
    if not final:
        raise SelectionError("no columns left after the channel step", {"mi": mi, "importance": importance})
    return SelectionReport(unit, thresholds, removed, mi, importance, mi_keep, imp_keep,
                           pca_res.to_dict(stage2.columns), scores, dropped, final,
                           class_summaries(work, labels) if with_summaries else [])
