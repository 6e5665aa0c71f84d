import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emgpipe.errors import ArgumentError, ContractError, FormatError, IntegrityError, VersionError
from emgpipe.models import (CARTConfig, ETConfig, KNNConfig, MLPConfig, TrainConfig, canonical_kind,
                            gradient_check, load_model, predict, save_model, train, train_cart,
                            train_extra_trees, train_knn, train_mlp)
from emgpipe.models import container, mlp
from emgpipe.models.extra_trees import grow_extra_tree
from emgpipe.models.knn import knn_vote
from emgpipe.models.trees import best_split, gini, grow_tree
from emgpipe.seeding import derive_seed


def _blobs(rng, n=300, d=4, classes=3, spread=0.3):
    y = rng.integers(0, classes, n)
    centers = rng.standard_normal((classes, d)) * 3
    return centers[y] + spread * rng.standard_normal((n, d)), y + 1


def _names(d):
    return [f"f{i}" for i in range(d)]


def brute_force_split(X, y, n_classes, min_leaf=1):
    """Lowest weighted Gini over every feature and midpoint."""
    best = None
    n = len(y)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            t = 0.5 * (a + b)
            m = X[:, f] <= t
            if m.sum() < min_leaf or (~m).sum() < min_leaf:
                continue
            g = (m.sum() * gini(np.bincount(y[m], minlength=n_classes))
                 + (~m).sum() * gini(np.bincount(y[~m], minlength=n_classes))) / n
            if best is None or g < best[0] - 1e-12:
                best = (g, f, t)
    return best


class TestCART:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
    def test_root_split_matches_brute_force(self, seed, min_leaf):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((30, 3))
        y = rng.integers(0, 3, 30)
        ours = best_split(X, np.eye(3)[y], min_leaf)
        ref = brute_force_split(X, y, 3, min_leaf)
        assert ours is not None and ref is not None
        assert ours[0] == ref[1] and math.isclose(ours[1], ref[2], rel_tol=1e-12)

    def test_fits_training_set(self, rng):
        X, y = _blobs(rng, spread=2.0)
        art = train_cart(X, y)
        assert np.array_equal(predict(art, X, _names(4))[0], y)

    def test_depth_limit(self, rng):
        X, y = _blobs(rng, spread=2.0)
        tree = grow_tree(X, y - 1, 3, max_depth=2)
        assert tree.depth() <= 2


class TestExtraTrees:
    def test_separable(self, rng):
        X, y = _blobs(rng)
        art = train_extra_trees(X, y, ETConfig(n_trees=30))
        Xt, yt = X + 0.01 * rng.standard_normal(X.shape), y
        assert np.mean(predict(art, Xt, _names(4))[0] == yt) > 0.97

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_single_tree_fits_distinct_points(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((40, 3))
        y = rng.integers(0, 4, 40)
        tree = grow_extra_tree(X, y, 4, 2, seed=seed & 0xFFFF)
        assert np.array_equal(tree.predict_proba(X).argmax(1), y)

    def test_thresholds_inside_node_range(self, rng):
        X = rng.standard_normal((200, 3))
        y = rng.integers(0, 2, 200)
        tree = grow_extra_tree(X, y, 2, 1, seed=3)
        leaf_of = tree.apply(X)
        for node in np.flatnonzero(tree.left != -1):
            f, t = tree.feature[node], tree.threshold[node]
            assert X[:, f].min() <= t < X[:, f].max()
        assert leaf_of.max() < tree.n_nodes

    def test_determinism_and_jobs(self, rng):
        X, y = _blobs(rng)
        a = train_extra_trees(X, y, ETConfig(n_trees=10), seed=5)
        b = train_extra_trees(X, y, ETConfig(n_trees=10), seed=5, jobs=4)
        c = train_extra_trees(X, y, ETConfig(n_trees=10), seed=6)
        assert a.same_as(b) and not a.same_as(c)

    def test_default_k(self, rng):
        X, y = _blobs(rng, d=10)
        assert train_extra_trees(X, y, ETConfig(n_trees=2)).params["k_features"] == 4

    def test_single_class(self):
        art = train_extra_trees(np.random.default_rng(0).standard_normal((20, 2)), np.full(20, 7),
                                ETConfig(n_trees=3))
        labels, proba = predict(art, np.zeros((2, 2)), _names(2))
        assert labels.tolist() == [7, 7] and np.all(proba == 1)

    def test_bootstrap_rejected(self, rng):
        with pytest.raises(ArgumentError):
            train_extra_trees(*_blobs(rng), ETConfig(bootstrap=True))

    def test_row_permutation(self, rng):
        X, y = _blobs(rng, spread=1.5)
        art = train_extra_trees(X, y, ETConfig(n_trees=10))
        perm = rng.permutation(len(y))
        la, pa = predict(art, X, _names(4))
        lb, pb = predict(art, X[perm], _names(4))
        assert np.array_equal(la[perm], lb) and np.array_equal(pa[perm], pb)


class TestMLP:
    def test_initial_loss_near_log_classes(self, rng):
        X = rng.standard_normal((500, 8))
        y = rng.integers(0, 5, 500)
        p = mlp.init_params(8, 32, 5, rng)
        assert abs(mlp.loss_only(p, X, y) - math.log(5)) < 0.05

    def test_gradient_check(self, rng):
        X = rng.standard_normal((12, 4))
        y = rng.integers(0, 3, 12)
        p = mlp.init_params(4, 6, 3, rng)
        p["W2"] *= 10
        p["b1"] += 0.1
        assert gradient_check(p, X, y) < 1e-6

    def test_learns_xor(self):
        X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 25, dtype=float)
        y = (X[:, 0] != X[:, 1]).astype(int)
        art = train_mlp(X, y, MLPConfig(hidden_units=16, epochs=300, batch_size=16, learning_rate=0.01), seed=1)
        assert np.array_equal(predict(art, X, _names(2))[0], y)
        assert art.extra["train_loss"][-1] < art.extra["train_loss"][0]

    def test_deterministic(self, rng):
        X, y = _blobs(rng)
        cfg = MLPConfig(epochs=3)
        assert train_mlp(X, y, cfg, seed=2).same_as(train_mlp(X, y, cfg, seed=2))

    def test_early_stopping_restores_best(self, rng):
        # random labels: validation loss turns upward once the net memorizes
        X = rng.standard_normal((200, 6))
        y = rng.integers(0, 2, 200)
        art = train_mlp(X, y, MLPConfig(epochs=300, validation_fraction=0.25, patience=5, learning_rate=0.01),
                        seed=4)
        vl = art.extra["val_loss"]
        assert 5 <= len(vl) < 300
        assert int(np.argmin(vl)) == len(vl) - 1 - 5


class TestKNN:
    def test_majority(self):
        Xtr = np.array([[0.0], [0.1], [0.2], [5.0]])
        labels, proba = knn_vote(Xtr, np.array([0, 0, 1, 1]), np.array([[0.05]]), 3, 2)
        assert labels[0] == 0 and np.allclose(proba[0], [2 / 3, 1 / 3])

    def test_vote_tie_goes_to_closer_class(self):
        Xtr = np.array([[0.0], [3.0], [-1.0], [4.0]])
        labels, _ = knn_vote(Xtr, np.array([0, 0, 1, 1]), np.array([[-0.2]]), 4, 2)
        # two votes each; class 1 sits at distances 0.8 and 4.2, class 0 at 0.2 and 3.2
        assert labels[0] == 0

    def test_full_tie_goes_to_lowest_class(self):
        Xtr = np.array([[1.0], [-1.0]])
        labels, _ = knn_vote(Xtr, np.array([1, 0]), np.array([[0.0]]), 2, 2)
        assert labels[0] == 0

    def test_equal_distance_neighbours_in_training_order(self):
        Xtr = np.array([[1.0], [-1.0], [1.0]])
        labels, proba = knn_vote(Xtr, np.array([2, 1, 0]), np.array([[0.0]]), 1, 3)
        assert labels[0] == 2

    def test_bad_k(self, rng):
        with pytest.raises(ArgumentError):
            train_knn(np.zeros((3, 1)), [0, 1, 2], KNNConfig(k=4))


class TestContainer:
    @pytest.mark.parametrize("kind", ["extra_trees", "mlp", "knn", "cart"])
    def test_round_trip(self, kind, rng, tmp_path):
        X, y = _blobs(rng)
        cfg = TrainConfig(et=ETConfig(n_trees=5), mlp=MLPConfig(epochs=2))
        art = train(kind, X, y, cfg, _names(4))
        save_model(art, tmp_path / "m.emgm")
        back = load_model(tmp_path / "m.emgm")
        assert back.same_as(art)
        a, pa = predict(art, X, _names(4))
        b, pb = predict(back, X, _names(4))
        assert np.array_equal(a, b) and np.array_equal(pa, pb)
        save_model(back, tmp_path / "m2.emgm")
        assert (tmp_path / "m.emgm").read_bytes() == (tmp_path / "m2.emgm").read_bytes()

    def test_flipped_byte(self, rng, tmp_path):
        blob = bytearray(container.encode({"kind": "x"}, {"a": np.arange(4.0)}))
        blob[30] ^= 1
        with pytest.raises(IntegrityError):
            container.decode(bytes(blob))

    def test_newer_version(self):
        blob = container.encode({"kind": "x", "version": container.FORMAT_VERSION + 1}, {})
        with pytest.raises(VersionError):
            container.decode(blob)

    def test_not_a_container(self):
        with pytest.raises(FormatError):
            container.decode(b"hello world, this is not a model")

    def test_schema_mismatch(self, rng):
        X, y = _blobs(rng)
        art = train_knn(X, y, feature_names=_names(4))
        with pytest.raises(ContractError):
            predict(art, X, ["f0", "f1", "f3", "f2"])
        with pytest.raises(ContractError):
            predict(art, X[:, :3], art.schema_hash)


def test_kind_aliases():
    assert canonical_kind("ET") == "extra_trees" and canonical_kind("rna") == "mlp"
    with pytest.raises(ArgumentError):
        canonical_kind("svm")


def test_non_finite_training_data():
    with pytest.raises(ArgumentError):
        train("knn", np.array([[np.nan], [1.0]]), [0, 1])


def test_seed_derivation():
    assert derive_seed(42, "tree", 3) == derive_seed(42, "tree", 3)
    seeds = {derive_seed(42, "tree", t) for t in range(1000)}
    assert len(seeds) == 1000 and derive_seed(42, "a") != derive_seed(43, "a")
