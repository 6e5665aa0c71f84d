"""Extremely randomized tree growth (compiled).

At each node the kernel visits features in a random order, skips those
constant within the node, and draws one threshold uniformly in
``[min, max)`` for each of the first ``k`` usable features. The candidate
with the lowest weighted Gini wins (first drawn on ties). Growth stops at
pure nodes, ``max_depth``, or when no candidate leaves ``min_leaf`` samples
on both sides.
"""
import numba
import numpy as np

from .trees import LEAF, Tree


@numba.njit(cache=True, nogil=True)
def _gini(counts, n):
    if n == 0:
        return 0.0
    s = 0.0
    for c in range(counts.shape[0]):
        p = counts[c] / n
        s += p * p
    return 1.0 - s


@numba.njit(cache=True, nogil=True)
def _grow(X, y, n_classes, k, min_leaf, max_depth, seed):
    np.random.seed(seed)
    n, d = X.shape
    cap = 2 * n + 1
    feature = np.zeros(cap, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros((cap, n_classes))
    nsamp = np.zeros(cap, np.int64)
    impurity = np.zeros(cap)
    samples = np.arange(n)
    feats = np.arange(d)
    counts = np.zeros(n_classes)
    lcounts = np.zeros(n_classes)
    best_l = np.zeros(n_classes)

    # stack of (node, start, end, depth)
    stack = np.zeros((cap, 4), np.int64)
    for i in range(n):
        value[0, y[i]] += 1.0
    nsamp[0] = n
    impurity[0] = _gini(value[0], n)
    n_nodes = 1
    top = 0
    stack[0, 0], stack[0, 1], stack[0, 2], stack[0, 3] = 0, 0, n, 0
    top = 1
    while top > 0:
        top -= 1
        node, start, end, depth = stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3]
        m = end - start
        for c in range(n_classes):
            counts[c] = value[node, c]
        pure = False
        for c in range(n_classes):
            if counts[c] == m:
                pure = True
        if pure or (max_depth >= 0 and depth >= max_depth) or m < 2 * min_leaf:
            continue

        best_score = -1.0
        best_f = -1
        best_t = 0.0
        found = 0
        j = 0
        while j < d and found < k:
            r = j + np.random.randint(d - j)
            tmp = feats[j]
            feats[j] = feats[r]
            feats[r] = tmp
            f = feats[j]
            j += 1
            lo = X[samples[start], f]
            hi = lo
            for s in range(start + 1, end):
                v = X[samples[s], f]
                if v < lo:
                    lo = v
                elif v > hi:
                    hi = v
            if not hi > lo:
                continue
            found += 1
            t = lo + (hi - lo) * np.random.random()
            for c in range(n_classes):
                lcounts[c] = 0.0
            nl = 0
            for s in range(start, end):
                i = samples[s]
                if X[i, f] <= t:
                    lcounts[y[i]] += 1.0
                    nl += 1
            nr = m - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            sl = 0.0
            sr = 0.0
            for c in range(n_classes):
                sl += lcounts[c] * lcounts[c]
                rc = counts[c] - lcounts[c]
                sr += rc * rc
            score = sl / nl + sr / nr
            if score > best_score:
                best_score = score
                best_f = f
                best_t = t
                for c in range(n_classes):
                    best_l[c] = lcounts[c]
        if best_f < 0:
            continue

        # partition samples[start:end] around the threshold
        i, jj = start, end - 1
        while i <= jj:
            if X[samples[i], best_f] <= best_t:
                i += 1
            else:
                tmp = samples[i]
                samples[i] = samples[jj]
                samples[jj] = tmp
                jj -= 1
        mid = i
        ln, rn = n_nodes, n_nodes + 1
        n_nodes += 2
        feature[node], threshold[node], left[node], right[node] = best_f, best_t, ln, rn
        for c in range(n_classes):
            value[ln, c] = best_l[c]
            value[rn, c] = counts[c] - best_l[c]
        nsamp[ln], nsamp[rn] = mid - start, end - mid
        impurity[ln] = _gini(value[ln], mid - start)
        impurity[rn] = _gini(value[rn], end - mid)
        # right first so the left subtree is expanded first
        stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3] = rn, mid, end, depth + 1
        top += 1
        stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3] = ln, start, mid, depth + 1
        top += 1
    for i in range(n_nodes):
        s = 0.0
        for c in range(n_classes):
            s += value[i, c]
        for c in range(n_classes):
            value[i, c] /= s
        if left[i] == -1:
            feature[i] = 0
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], nsamp[:n_nodes], impurity[:n_nodes])


def grow_extra_tree(X: np.ndarray, y: np.ndarray, n_classes: int, k_features: int, min_leaf: int = 1,
                    max_depth=None, seed: int = 0) -> Tree:
    """Grow one extremely randomized tree; the kernel RNG is seeded with the low 32 bits of ``seed``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    out = _grow(X, y, int(n_classes), int(k_features), int(min_leaf),
                -1 if max_depth is None else int(max_depth), int(seed) & 0xFFFFFFFF)
    return Tree(*out)
