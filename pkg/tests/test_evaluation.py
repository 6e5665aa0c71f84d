import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emgpipe.errors import ArgumentError, StratificationError
from emgpipe.evaluation import (compare_models, comparison_csv, compute_metrics, confusion_matrix,
                                cross_validate, dispersion_stats, fold_scaler, learning_curve, make_folds,
                                metrics_from_confusion, stratified_kfold, stratified_subsample,
                                window_comparison, _fingerprint)
from emgpipe.features import FeatureTable
from emgpipe.models import ETConfig, KNNConfig, TrainConfig


def reference_metrics(t, p):
    """Metrics by direct counting over label pairs."""
    classes = sorted(set(t) | set(p))
    n = len(t)
    acc = sum(a == b for a, b in zip(t, p)) / n
    precs, recs, f1s = [], [], []
    for c in classes:
        tp = sum(a == c and b == c for a, b in zip(t, p))
        npred = sum(b == c for b in p)
        ntrue = sum(a == c for a in t)
        pr = tp / npred if npred else 0.0
        rc = tp / ntrue if ntrue else 0.0
        precs.append(pr)
        recs.append(rc)
        f1s.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
    pe = sum((sum(a == c for a in t) / n) * (sum(b == c for b in p) / n) for c in classes)
    kappa = (acc - pe) / (1 - pe) if pe != 1 else 1.0
    return classes, {"accuracy": acc, "precision_macro": np.mean(precs), "recall_macro": np.mean(recs),
                     "f1_macro": np.mean(f1s), "kappa": kappa}


class TestMetrics:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=80))
    def test_against_reference(self, pairs):
        t, p = [a for a, _ in pairs], [b for _, b in pairs]
        classes, ref = reference_metrics(t, p)
        ours, cm = compute_metrics(t, p, classes)
        assert cm.sum() == len(t)
        for k, v in ref.items():
            assert abs(ours[k] - v) < 1e-12, k

    def test_kappa_identities(self):
        y = [0, 1, 2, 0, 1, 2]
        assert compute_metrics(y, y, [0, 1, 2])[0]["kappa"] == 1.0
        # chance-level agreement: predictions independent of truth marginals
        m, _ = compute_metrics([0, 0, 1, 1], [0, 1, 0, 1], [0, 1])
        assert m["kappa"] == 0.0
        m, _ = compute_metrics([0, 0, 1, 1], [1, 1, 0, 0], [0, 1])
        assert m["kappa"] == -1.0

    def test_undefined_classes_listed(self):
        m = metrics_from_confusion(np.array([[2, 0, 0], [1, 0, 0], [0, 0, 0]]))
        assert m["undefined"] == {"never_predicted": [1, 2], "absent": [2]}

    def test_errors(self):
        with pytest.raises(ArgumentError):
            compute_metrics([], [], [0])
        with pytest.raises(ArgumentError):
            confusion_matrix([0, 5], [0, 0], [0, 1])


class TestFolds:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(2, 10))
    def test_stratified_balance(self, seed, k):
        rng = np.random.default_rng(seed)
        labels = np.repeat(np.arange(4), rng.integers(k, 3 * k, 4))
        folds = stratified_kfold(labels, k, seed)
        assert set(folds.tolist()) == set(range(k))
        for c in range(4):
            counts = np.bincount(folds[labels == c], minlength=k)
            assert counts.max() - counts.min() <= 1
        sizes = np.bincount(folds, minlength=k)
        assert sizes.max() - sizes.min() <= 1

    def test_deterministic(self):
        labels = np.repeat([0, 1], 20)
        assert np.array_equal(stratified_kfold(labels, 5, 1), stratified_kfold(labels, 5, 1))
        assert not np.array_equal(stratified_kfold(labels, 5, 1), stratified_kfold(labels, 5, 2))

    def test_groups_stay_together(self, table200):
        folds = make_folds(table200, 5, 3, "repetition")
        g = table200.groups()
        for u in np.unique(g):
            assert np.unique(folds[g == u]).size == 1

    def test_too_few(self):
        with pytest.raises(StratificationError):
            stratified_kfold([0, 0, 1], 2, 0)
        with pytest.raises(StratificationError):
            stratified_kfold([0, 1, 1, 0], 2, 0, groups=[1, 1, 2, 2])


def _toy_table(rng, n_per=30, shift=3.0, classes=3, subjects=2):
    meta, vals = [], []
    for s in range(1, subjects + 1):
        for c in range(1, classes + 1):
            for r in range(1, 6):
                for w in range(n_per // 5):
                    meta.append((s, c, r, w))
                    vals.append(rng.standard_normal(3) + shift * c)
    n = len(meta)
    return FeatureTable(np.array(meta), np.array(vals), ["a", "b", "c"], ["a", "b", "c"], [0, 0, 0],
                        np.zeros((n, 3), bool))


class TestCrossValidation:
    def test_fold_scaler_uses_training_rows_only(self, rng):
        t = _toy_table(rng)
        folds = make_folds(t, 5, 0, "window")
        rep = cross_validate("knn", TrainConfig(knn=KNNConfig(k=3)), t, folds)
        for f in rep.folds:
            tr = folds != f["fold"]
            assert f["scaler"] == _fingerprint(*fold_scaler(t.values[tr]))
            assert f["scaler"] != _fingerprint(*fold_scaler(t.values))
        assert rep.aggregate["pooled"]["accuracy"] > 0.95

    def test_jobs_invariant(self, rng):
        t = _toy_table(rng, shift=0.7)
        folds = make_folds(t, 5, 0, "repetition")
        cfg = TrainConfig(et=ETConfig(n_trees=5))
        a = cross_validate("et", cfg, t, folds)
        b = cross_validate("et", cfg, t, folds, jobs=3)
        assert np.array_equal(a.predictions, b.predictions) and a.to_dict() == b.to_dict()

    def test_report_serializes(self, rng):
        t = _toy_table(rng)
        rep = cross_validate("knn", TrainConfig(), t, make_folds(t, 5, 0, "repetition"))
        d = rep.to_dict()
        assert set(d["per_subject"]) == {"1", "2"}
        assert rep.confusion_csv().startswith("true\\pred,1,2,3")


class TestLearningCurve:
    def test_subsample_stratified(self, rng):
        labels = np.repeat([0, 1, 2], [10, 20, 31])
        idx = stratified_subsample(labels, 0.5, rng)
        assert np.bincount(labels[idx]).tolist() == [5, 10, 16]
        assert np.all(np.diff(idx) > 0)

    def test_full_fraction_equals_cv_fold(self, rng):
        t = _toy_table(rng, shift=0.8)
        folds = make_folds(t, 5, 0, "repetition")
        cfg = TrainConfig(knn=KNNConfig(k=3))
        lc = learning_curve("knn", cfg, t, [0.3, 1.0], repeats=2, folds=folds, val_fold=0)
        rep = cross_validate("knn", cfg, t, folds)
        fold0 = [f for f in rep.folds if f["fold"] == 0][0]
        assert lc.val_score[-1] == pytest.approx(fold0["accuracy"], abs=1e-15)
        assert lc.train_std[-1] == 0 and lc.to_csv().count("\n") == 3

    def test_bad_fractions(self, rng):
        with pytest.raises(ArgumentError):
            learning_curve("knn", TrainConfig(), _toy_table(rng), [0.5, 0.5])


class TestComparison:
    def test_ranking_and_same_folds(self, rng):
        t = _toy_table(rng, shift=0.6)
        folds = make_folds(t, 5, 0, "repetition")
        cmp = compare_models(["knn", "et"], TrainConfig(et=ETConfig(n_trees=10)), t, folds)
        accs = [r["Accuracy"] for r in cmp["rows"]]
        assert accs == sorted(accs, reverse=True) and [r["rank"] for r in cmp["rows"]] == [1, 2]
        for rep in cmp["reports"].values():
            assert np.array_equal(rep.fold_assignment, folds)
        assert comparison_csv(cmp).splitlines()[0] == "Rank,Model,Accuracy,Recall,F1,Prec.,Kappa"


def test_dispersion_by_hand():
    meta = np.array([(1, 1, 1, w) for w in range(5)])
    vals = np.array([[1.0], [2.0], [3.0], [4.0], [100.0]])
    t = FeatureTable(meta, vals, ["x"], ["x"], [0], np.zeros((5, 1), bool))
    disp, out = dispersion_stats(t)
    assert disp == pytest.approx(2.0 / 3.0)   # IQR (2 to 4) over median 3
    assert out == pytest.approx(1 / 5)


def test_window_comparison_rows(envelopes):
    rows = window_comparison(envelopes[:1], [100, 200], "knn", n_folds=3)
    assert [r["window_ms"] for r in rows] == [100.0, 200.0]
    assert rows[0]["n_windows"] > rows[1]["n_windows"]
    assert all(0 <= r["accuracy"] <= 1 and r["dispersion_index"] > 0 for r in rows)
