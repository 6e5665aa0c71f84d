"""Cross-validation, metrics, learning curves and model comparison."""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError, StratificationError
from .features import FeatureTable, WindowSpec, extract_feature_table
from .models import TrainConfig, canonical_kind, predict, train
from .seeding import derive_seed

log = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision_macro", "recall_macro", "f1_macro", "kappa")
TABLE_COLUMNS = (("Accuracy", "accuracy"), ("Recall", "recall_macro"), ("F1", "f1_macro"),
                 ("Prec.", "precision_macro"), ("Kappa", "kappa"))


# ------------------------------------------------------------------- folds

def stratified_kfold(labels, k: int, seed: int, groups=None) -> np.ndarray:
    """Fold index (0..k-1) per sample.

    Within each class the members are shuffled with ``seed`` and dealt to
    folds round-robin. The fold that receives a class's first member
    rotates from class to class so fold sizes stay balanced. With
    ``groups``, whole groups are dealt instead of samples (each group must
    be single-class).
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ArgumentError("k must be >= 2")
    rng = np.random.default_rng(derive_seed(seed, "kfold"))
    folds = np.full(labels.shape[0], -1, dtype=np.int64)
    if groups is None:
        units = np.arange(labels.shape[0])
        unit_label = labels
    else:
        groups = np.asarray(groups)
        units, first = np.unique(groups, return_index=True)
        unit_label = labels[first]
        for u in units:
            if np.unique(labels[groups == u]).size > 1:
                raise StratificationError(f"group {u} mixes classes")
    offset = 0
    for c in np.unique(unit_label):
        members = units[unit_label == c]
        if members.size < k:
            what = "groups" if groups is not None else "samples"
            raise StratificationError(f"class {c} has {members.size} {what}, fewer than k={k}")
        members = members[rng.permutation(members.size)]
        assign = (offset + np.arange(members.size)) % k
        offset = (offset + members.size) % k
        if groups is None:
            folds[members] = assign
        else:
            for u, f in zip(members, assign):
                folds[groups == u] = f
    return folds


# ----------------------------------------------------------------- metrics

def confusion_matrix(y_true, y_pred, classes) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(np.asarray(y_true).tolist(), np.asarray(y_pred).tolist()):
        if t not in index or p not in index:
            raise ArgumentError(f"label {t if t not in index else p} is not among the classes")
        cm[index[t], index[p]] += 1
    return cm


def metrics_from_confusion(cm: np.ndarray) -> dict:
    """Accuracy, macro precision/recall/F1 and Cohen's kappa.

    Classes never predicted get precision 0 and classes absent from the
    truth get recall 0; both are listed under ``undefined``.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    prec = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    rec = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros_like(tp), where=denom > 0)
    p_o = tp.sum() / total
    # kappa from counts: (N*agree - sum pred*true) / (N^2 - sum pred*true), exact for integer tables
    chance = float((pred * true).sum())
    kappa = 1.0 if chance == total ** 2 else (total * tp.sum() - chance) / (total ** 2 - chance)
    return {"accuracy": float(p_o), "precision_macro": float(prec.mean()), "recall_macro": float(rec.mean()),
            "f1_macro": float(f1.mean()), "kappa": float(kappa),
            "undefined": {"never_predicted": np.flatnonzero(pred == 0).tolist(),
                          "absent": np.flatnonzero(true == 0).tolist()}}


def compute_metrics(y_true, y_pred, classes) -> tuple:
    """``(metrics, confusion_matrix)`` for one prediction set."""
    if len(y_true) == 0:
        raise ArgumentError("empty input")
    if len(y_true) != len(y_pred):
        raise ArgumentError("y_true and y_pred lengths differ")
    cm = confusion_matrix(y_true, y_pred, classes)
    return metrics_from_confusion(cm), cm


# --------------------------------------------------------------- reporting

@dataclass
class EvaluationReport:
    kind: str
    classes: list
    folds: list
    aggregate: dict
    per_subject: dict
    confusion: np.ndarray
    fold_assignment: np.ndarray
    config: dict
    predictions: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "classes": list(self.classes), "folds": self.folds,
                "aggregate": self.aggregate, "per_subject": self.per_subject,
                "confusion": self.confusion.tolist(), "fold_assignment": self.fold_assignment.tolist(),
                "config": self.config}

    def confusion_csv(self) -> str:
        lines = ["true\\pred," + ",".join(str(c) for c in self.classes)]
        for c, row in zip(self.classes, self.confusion):
            lines.append(f"{c}," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def _mean_std(values: Sequence[dict]) -> dict:
    out = {}
    for m in METRIC_NAMES:
        arr = np.array([v[m] for v in values])
        out[m] = {"mean": float(arr.mean()), "std": float(arr.std())}
    return out


def fold_scaler(X: np.ndarray):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return mu, np.where(sd > 0, sd, 1.0)


def _fingerprint(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def make_folds(table: FeatureTable, k: int = 10, seed: int = 42, mode: str = "repetition") -> np.ndarray:
    """Folds over table rows, split by window or grouped by repetition."""
    if mode == "window":
        return stratified_kfold(table.gesture, k, seed)
    if mode == "repetition":
        return stratified_kfold(table.gesture, k, seed, groups=table.groups())
    raise ArgumentError(f"unknown split mode {mode!r}")


def cross_validate(kind: str, cfg: TrainConfig, table: FeatureTable, folds: np.ndarray,
                   jobs: int = 1, split_mode: Optional[str] = None) -> EvaluationReport:
    """Fit a fold-local scaler and model per fold and score the held-out rows."""
    kind = canonical_kind(kind)
    X, y = table.values, table.gesture
    folds = np.asarray(folds)
    if folds.shape[0] != X.shape[0]:
        raise ArgumentError("fold assignment length does not match the table")
    classes = sorted(int(c) for c in np.unique(y))
    fold_ids = sorted(int(f) for f in np.unique(folds))

    def run(f):
        tr, te = folds != f, folds == f
        mu, sd = fold_scaler(X[tr])
        model = train(kind, (X[tr] - mu) / sd, y[tr], cfg, table.columns)
        pred, _ = predict(model, (X[te] - mu) / sd, table.columns)
        return f, pred, _fingerprint(mu, sd)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(run, fold_ids))
    else:
        results = [run(f) for f in fold_ids]

    predictions = np.zeros_like(y)
    per_fold = []
    for f, pred, fp in results:
        te = folds == f
        predictions[te] = pred
        m, _ = compute_metrics(y[te], pred, classes)
        m.pop("undefined")
        per_fold.append({"fold": f, "n_test": int(te.sum()), "scaler": fp, **m})
    pooled, cm = compute_metrics(y, predictions, classes)
    subj = {}
    for s in np.unique(table.subject):
        rows = table.subject == s
        ms, _ = compute_metrics(y[rows], predictions[rows], classes)
        ms.pop("undefined")
        subj[str(int(s))] = ms
    aggregate = {"fold_mean_std": _mean_std(per_fold), "pooled": pooled,
                 "subject_mean": {m: float(np.mean([v[m] for v in subj.values()])) for m in METRIC_NAMES}}
    config = {"kind": kind, "train": cfg.to_dict(), "n_folds": len(fold_ids), "split_mode": split_mode,
              "columns_hash": table.schema_hash()}
    return EvaluationReport(kind, classes, per_fold, aggregate, subj, cm, folds, config, predictions)


# ---------------------------------------------------------- learning curve

@dataclass
class LearningCurve:
    train_fractions: np.ndarray
    train_score: np.ndarray
    train_std: np.ndarray
    val_score: np.ndarray
    val_std: np.ndarray

    def to_csv(self) -> str:
        lines = ["fraction,train_mean,train_std,val_mean,val_std"]
        for row in zip(self.train_fractions, self.train_score, self.train_std, self.val_score, self.val_std):
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def stratified_subsample(labels, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices holding ``ceil(fraction * n_c)`` members of each class."""
    out = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        n = int(np.ceil(fraction * members.size - 1e-9))
        if n < 1:
            raise StratificationError(f"fraction {fraction} leaves class {c} empty")
        out.append(members if n >= members.size else rng.choice(members, n, replace=False))
    return np.sort(np.concatenate(out))


def learning_curve(kind: str, cfg: TrainConfig, table: FeatureTable, fractions, repeats: int = 3,
                   seed: int = 42, folds: Optional[np.ndarray] = None, val_fold: int = 0) -> LearningCurve:
    """Accuracy vs training-set size on a fixed validation fold.

    The validation rows are fold ``val_fold`` of ``folds`` (default: the
    5-fold repetition-grouped split). Training subsets are stratified and
    kept in table order; at fraction 1.0 the run equals the matching
    cross-validation fold.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions <= 0) or np.any(fractions > 1) or np.any(np.diff(fractions) <= 0):
        raise ArgumentError("fractions must be strictly increasing within (0, 1]")
    if folds is None:
        folds = make_folds(table, 5, seed, "repetition")
    tr_all, va = np.flatnonzero(folds != val_fold), np.flatnonzero(folds == val_fold)
    X, y = table.values, table.gesture
    tr_mean, tr_std, va_mean, va_std = [], [], [], []
    for fi, frac in enumerate(fractions):
        tr_s, va_s = [], []
        for r in range(repeats if frac < 1 else 1):
            rng = np.random.default_rng(derive_seed(seed, "learning_curve", fi, r))
            sub = tr_all[stratified_subsample(y[tr_all], frac, rng)]
            mu, sd = fold_scaler(X[sub])
            model = train(kind, (X[sub] - mu) / sd, y[sub], cfg, table.columns)
            p_tr, _ = predict(model, (X[sub] - mu) / sd, table.columns)
            p_va, _ = predict(model, (X[va] - mu) / sd, table.columns)
            tr_s.append(np.mean(p_tr == y[sub]))
            va_s.append(np.mean(p_va == y[va]))
        tr_mean.append(np.mean(tr_s)), tr_std.append(np.std(tr_s))
        va_mean.append(np.mean(va_s)), va_std.append(np.std(va_s))
    return LearningCurve(fractions, np.array(tr_mean), np.array(tr_std), np.array(va_mean), np.array(va_std))


# -------------------------------------------------------------- comparison

def compare_models(kinds: Sequence[str], cfg: TrainConfig, table: FeatureTable, folds: np.ndarray,
                   jobs: int = 1) -> dict:
    """Cross-validate every kind on the same folds and rank by accuracy, then kappa."""
    if not kinds:
        raise ArgumentError("no model kinds given")
    folds = np.asarray(folds)
    reports = {}
    for kind in kinds:
        rep = cross_validate(kind, cfg, table, folds, jobs)
        assert np.array_equal(rep.fold_assignment, folds)
        reports[canonical_kind(kind)] = rep
    order = sorted(reports, key=lambda k: (-reports[k].aggregate["pooled"]["accuracy"],
                                           -reports[k].aggregate["pooled"]["kappa"], k))
    rows = []
    for rank, k in enumerate(order, start=1):
        pooled = reports[k].aggregate["pooled"]
        rows.append({"rank": rank, "model": k, **{col: pooled[key] for col, key in TABLE_COLUMNS}})
    return {"rows": rows, "reports": reports, "folds_hash": _fingerprint(folds)}


def comparison_csv(comparison: dict) -> str:
    cols = ["Rank", "Model"] + [c for c, _ in TABLE_COLUMNS]
    lines = [",".join(cols)]
    for r in comparison["rows"]:
        lines.append(",".join([str(r["rank"]), r["model"]] + [repr(float(r[c])) for c, _ in TABLE_COLUMNS]))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------- window comparison

def dispersion_stats(table: FeatureTable) -> tuple:
    """``(dispersion_index, outlier_rate)`` computed within each class.

    For every (class, column) the ratio IQR / |median| is formed (zero
    medians skipped). Each feature family (``RMS``, ``AR``, ``RMS_std``, ...)
    is summarized by the median of its ratios, and the index is the median
    over families, so channel-expanded families do not outvote scalar ones.
    Outliers are cells outside the Tukey fences [Q1 - 1.5 IQR, Q3 + 1.5 IQR]
    of their (class, column).
    """
    fams = np.asarray(table.families)
    per_family = {f: [] for f in dict.fromkeys(table.families)}
    outliers, cells = 0, 0
    for c in np.unique(table.gesture):
        V = table.values[table.gesture == c]
        q1, med, q3 = np.percentile(V, [25, 50, 75], axis=0)
        iqr = q3 - q1
        ok = np.abs(med) > 1e-12
        for j in np.flatnonzero(ok):
            per_family[fams[j]].append(iqr[j] / abs(med[j]))
        outliers += int(((V < q1 - 1.5 * iqr) | (V > q3 + 1.5 * iqr)).sum())
        cells += V.size
    summaries = [float(np.median(r)) for r in per_family.values() if r]
    return (float(np.median(summaries)) if summaries else 0.0), (outliers / cells if cells else 0.0)


def window_comparison(recordings, windows_ms=(100, 200, 300), kind: str = "extra_trees",
                      cfg: TrainConfig = TrainConfig(), registry=None, include_rest: bool = True,
                      n_folds: int = 10, split_mode: str = "repetition", seed: int = 42,
                      jobs: int = 1) -> list:
    """Feature extraction + cross-validation per window length, one row each."""
    rows = []
    for w in windows_ms:
        table = extract_feature_table(recordings, registry, WindowSpec(float(w)), include_rest)
        folds = make_folds(table, n_folds, seed, split_mode)
        rep = cross_validate(kind, cfg, table, folds, jobs, split_mode)
        disp, out = dispersion_stats(table)
        rows.append({"window_ms": float(w), "n_windows": table.n_rows,
                     "accuracy": rep.aggregate["pooled"]["accuracy"], "dispersion_index": disp,
                     "outlier_rate": out})
    return rows
