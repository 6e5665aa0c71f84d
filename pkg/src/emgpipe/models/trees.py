"""Classification trees: exhaustive-Gini CART plus the shared node-array format.

A fitted tree is a set of flat node arrays. Internal nodes send a sample
left when ``x[feature] <= threshold``; leaves have ``left == -1`` and hold a
class distribution in ``value``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            inner = self.left[node] != LEAF
            if not inner.any():
                return node
            r, nd = rows[inner], node[inner]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.left[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def feature_importances(self, n_features: int) -> np.ndarray:
        """Weighted Gini decrease per feature, normalized to sum 1 (zeros if unsplit)."""
        imp = np.zeros(n_features)
        total = self.n_samples[0]
        for i in range(self.n_nodes):
            if self.left[i] == LEAF:
                continue
            l, r = self.left[i], self.right[i]
            imp[self.feature[i]] += (self.n_samples[i] * self.impurity[i]
                                     - self.n_samples[l] * self.impurity[l]
                                     - self.n_samples[r] * self.impurity[r]) / total
        s = imp.sum()
        return imp / s if s > 0 else imp


def gini(counts: np.ndarray) -> float:
    n = counts.sum()
    return 0.0 if n == 0 else 1.0 - float(np.sum((counts / n) ** 2))


def _split_score(left_counts, right_counts):
    """Sum over children of ``sum_c n_c^2 / n``; larger means lower weighted Gini."""
    nl = left_counts.sum(axis=-1)
    nr = right_counts.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (left_counts ** 2).sum(axis=-1) / nl + (right_counts ** 2).sum(axis=-1) / nr
    return s


def best_split(Xn: np.ndarray, onehot: np.ndarray, min_leaf: int, chunk_cells: int = 4_000_000):
    """Exhaustive search over midpoints of sorted unique values.

    Ties go to the lowest feature index, then the lowest threshold.
    Returns ``(feature, threshold)`` or ``None``.
    """
    n, d = Xn.shape
    if n < 2 * min_leaf:
        return None
    n_classes = onehot.shape[1]
    step = max(1, chunk_cells // max(1, n * n_classes))
    pos = np.arange(1, n)[:, None]
    size_ok = (pos >= min_leaf) & (n - pos >= min_leaf)
    best = (-np.inf, None)
    for f0 in range(0, d, step):
        block = Xn[:, f0:f0 + step]
        order = np.argsort(block, axis=0, kind="stable")
        xs = np.take_along_axis(block, order, axis=0)
        cum = np.cumsum(onehot[order], axis=0)  # (n, chunk, C)
        left = cum[:-1]
        right = cum[-1][None] - left
        valid = (xs[:-1] < xs[1:]) & size_ok
        if not valid.any():
            continue
        score = np.where(valid, _split_score(left, right), -np.inf).T  # feature-major for the tie rule
        flat = int(np.argmax(score))
        f, i = divmod(flat, n - 1)
        if score[f, i] > best[0]:
            thr = 0.5 * (xs[i, f] + xs[i + 1, f])
            if thr >= xs[i + 1, f]:  # midpoint rounded onto the right value
                thr = xs[i, f]
            best = (score[f, i], (f0 + f, float(thr)))
    return best[1]


def grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, *, max_depth: Optional[int] = None,
              min_leaf: int = 1) -> Tree:
    """Grow one CART tree depth-first; ``y`` holds class indices 0..n_classes-1."""
    onehot = np.eye(n_classes)[y]
    feature, threshold, left, right, value, nsamp, impurity = [], [], [], [], [], [], []

    def new_node(idx):
        counts = onehot[idx].sum(axis=0)
        feature.append(-2)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(counts / counts.sum())
        nsamp.append(len(idx))
        impurity.append(gini(counts))
        return len(feature) - 1, counts

    root, _ = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = onehot[idx].sum(axis=0)
        if counts.max() == len(idx) or (max_depth is not None and depth >= max_depth):
            continue
        split = best_split(X[idx], onehot[idx], min_leaf)
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        lnode, _ = new_node(li)
        rnode, _ = new_node(ri)
        feature[node], threshold[node], left[node], right[node] = f, thr, lnode, rnode
        # right pushed first so the left subtree is expanded first
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))
    for i in range(len(feature)):
        if left[i] == LEAF:
            feature[i] = 0
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value).reshape(-1, n_classes),
                np.array(nsamp, dtype=np.int64), np.array(impurity))


def pack_trees(trees: list) -> dict:
    """Concatenate node arrays of several trees; ``offsets`` marks each root."""
    sizes = [t.n_nodes for t in trees]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    cat = lambda name: np.concatenate([getattr(t, name) for t in trees])
    return {"offsets": offsets, "feature": cat("feature"), "threshold": cat("threshold"),
            "left": cat("left"), "right": cat("right"), "value": cat("value"),
            "n_samples": cat("n_samples"), "impurity": cat("impurity")}


def unpack_trees(state: dict) -> list:
    off = state["offsets"]
    out = []
    for a, b in zip(off[:-1], off[1:]):
        out.append(Tree(state["feature"][a:b], state["threshold"][a:b], state["left"][a:b],
                        state["right"][a:b], state["value"][a:b], state["n_samples"][a:b],
                        state["impurity"][a:b]))
    return out
