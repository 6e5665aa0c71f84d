"""Gesture clustering by Mahalanobis distance and complete linkage.

Each gesture is summarized by the mean of its feature windows; distances
between gesture means use the pooled within-gesture covariance. The
agglomeration is the classic O(n^3) scheme with deterministic
lexicographic tie-breaking, which is ample for a few dozen gestures.
"""
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError, DataError, DegenerateError
from .features import FeatureTable

REST_LABEL = 0
MAX_CONDITION = 1e8


@dataclass(frozen=True, eq=False)
class GestureSummary:
    gesture: int
    mean_vector: np.ndarray
    n_windows: int


@dataclass(frozen=True, eq=False)
class PooledCovariance:
    """Regularized pooled covariance with a cached inverse and whitening map.

    ``shrinkage_lambda`` is the ridge multiplier actually applied (0 when the
    raw matrix was already well conditioned); the added diagonal term is
    ``shrinkage_lambda * trace / d``.
    """

    matrix: np.ndarray
    shrinkage_lambda: float
    inverse: np.ndarray
    whitener: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, matrix, shrinkage_lambda: float = 0.0) -> "PooledCovariance":
        S = np.asarray(matrix, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ArgumentError(f"covariance must be square, got shape {S.shape}")
        if not np.allclose(S, S.T, rtol=0, atol=1e-10 * max(1.0, np.abs(S).max())):
            raise ArgumentError("covariance is not symmetric")
        S = 0.5 * (S + S.T)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise DegenerateError("covariance is not positive definite") from None
        W = np.linalg.inv(L)
        inv = W.T @ W
        for a in (S, W, inv):
            a.setflags(write=False)
        return cls(S, float(shrinkage_lambda), 0.5 * (inv + inv.T), W)


def _condition(S: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(S)
    if ev[0] <= 0:
        return np.inf
    return float(ev[-1] / ev[0])


def regularize(S: np.ndarray, lam: float = 1e-6, max_condition: float = MAX_CONDITION) -> PooledCovariance:
    """Add ``lam * trace / d`` to the diagonal, growing ``lam`` tenfold until
    the condition number drops below ``max_condition``.

    A well-conditioned input is returned unchanged with lambda 0. An all-zero
    matrix uses a unit scale in place of ``trace / d``.
    """
    S = 0.5 * (np.asarray(S, dtype=np.float64) + np.asarray(S, dtype=np.float64).T)
    d = S.shape[0]
    if _condition(S) < max_condition:
        return PooledCovariance.from_matrix(S, 0.0)
    if lam <= 0:
        raise DegenerateError("covariance is ill conditioned and regularization is disabled")
    scale = np.trace(S) / d
    if not scale > 0:
        scale = 1.0
    while True:
        R = S + lam * scale * np.eye(d)
        if _condition(R) < max_condition:
            return PooledCovariance.from_matrix(R, lam)
        lam *= 10.0
        if lam > 1e6:
            raise DegenerateError("could not regularize the pooled covariance")


def pooled_covariance(X, labels, lam: float = 1e-6) -> PooledCovariance:
    """Pooled within-group covariance ``sum_g sum_w (x - m_g)(x - m_g)^T / (N - G)``."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    groups = np.unique(labels)
    N, G = X.shape[0], len(groups)
    if N - G < 1:
        raise DataError("need more windows than gestures to pool a covariance")
    R = X.copy()
    for g in groups:
        m = labels == g
        R[m] -= X[m].mean(axis=0)
    return regularize(R.T @ R / (N - G), lam)


def summarize_gestures(table: FeatureTable, lam: float = 1e-6, include_rest: bool = False):
    """Per-gesture mean vectors and the pooled covariance of ``table``.

    Rest windows are left out unless ``include_rest``.
    """
    keep = np.ones(table.n_rows, dtype=bool) if include_rest else table.gesture != REST_LABEL
    X, g = table.values[keep], table.gesture[keep]
    labels, counts = np.unique(g, return_counts=True)
    if len(labels) == 0:
        raise DataError("no gesture windows to summarize")
    small = [int(a) for a, c in zip(labels, counts) if c < 2]
    if small:
        raise DataError(f"gestures with fewer than 2 windows: {small}")
    summaries = [GestureSummary(int(a), X[g == a].mean(axis=0), int(c)) for a, c in zip(labels, counts)]
    return summaries, pooled_covariance(X, g, lam)


def mahalanobis_distance(u, v, cov: PooledCovariance) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape or u.shape[0] != cov.dim:
        raise ArgumentError(f"dimension mismatch: {u.shape[0]}, {v.shape[0]} vs covariance {cov.dim}")
    z = cov.whitener @ (u - v)
    return float(np.sqrt(z @ z))


def distance_matrix(summaries: Sequence[GestureSummary], cov: PooledCovariance):
    """``(labels, D)`` of pairwise Mahalanobis distances between gesture means."""
    labels = [s.gesture for s in summaries]
    Z = np.array([s.mean_vector for s in summaries]) @ cov.whitener.T
    n = len(labels)
    D = np.zeros((n, n))
    for i in range(n):
        diff = Z[i + 1:] - Z[i]
        D[i, i + 1:] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    D = D + D.T
    return labels, D


@dataclass(frozen=True)
class MergeStep:
    left_id: int
    right_id: int
    height: float
    new_id: int
    size: int


@dataclass(frozen=True)
class LinkageTree:
    """Ordered merges; leaf ids are the gesture labels and internal ids
    continue from ``max(label) + 1`` in merge order."""

    leaves: tuple
    steps: tuple

    def members(self, node_id: int) -> list:
        """Sorted leaf labels under ``node_id``."""
        kids = {s.new_id: (s.left_id, s.right_id) for s in self.steps}
        out, stack = [], [node_id]
        while stack:
            a = stack.pop()
            if a in kids:
                stack.extend(kids[a])
            else:
                out.append(a)
        return sorted(out)

    def to_dict(self) -> dict:
        return {"leaves": list(self.leaves),
                "steps": [{"left_id": s.left_id, "right_id": s.right_id, "height": s.height,
                           "new_id": s.new_id, "size": s.size} for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "LinkageTree":
        return cls(tuple(int(a) for a in d["leaves"]),
                   tuple(MergeStep(int(s["left_id"]), int(s["right_id"]), float(s["height"]),
                                   int(s["new_id"]), int(s["size"])) for s in d["steps"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_dot(self, name: str = "dendrogram") -> str:
        lines = [f"digraph {name} {{", "  node [shape=box];"]
        for a in self.leaves:
            lines.append(f'  n{a} [label="G{a}"];')
        for s in self.steps:
            lines.append(f'  n{s.new_id} [shape=ellipse, label="{s.height:.6g}"];')
            lines.append(f"  n{s.new_id} -> n{s.left_id};")
            lines.append(f"  n{s.new_id} -> n{s.right_id};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _check_distances(D: np.ndarray) -> None:
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ArgumentError(f"distance matrix must be square, got shape {D.shape}")
    if not np.isfinite(D).all():
        raise ArgumentError("distance matrix has non-finite entries")
    if not np.array_equal(D, D.T):
        raise ArgumentError("distance matrix is not symmetric")
    if np.any(np.diag(D) != 0):
        raise ArgumentError("distance matrix diagonal must be zero")


def complete_linkage(dist, labels: Optional[Sequence[int]] = None) -> LinkageTree:
    """Agglomerate by maximum inter-member distance.

    Each step merges the closest pair of active clusters; equal distances
    go to the smallest ``(left_id, right_id)`` with ``left_id < right_id``.
    Cluster distances are updated with ``max`` (Lance-Williams), which is
    exact for complete linkage.
    """
    D0 = np.asarray(dist, dtype=np.float64)
    _check_distances(D0)
    n = D0.shape[0]
    labels = list(range(n)) if labels is None else [int(a) for a in labels]
    if len(labels) != n or len(set(labels)) != n or min(labels, default=0) < 0:
        raise ArgumentError("labels must be n distinct nonnegative integers")
    if n == 0:
        raise ArgumentError("empty distance matrix")
    size = 2 * n - 1
    D = np.full((size, size), np.inf)
    D[:n, :n] = D0
    ids = labels + [0] * (n - 1)
    counts = [1] * n + [0] * (n - 1)
    active = list(range(n))
    base = max(labels) + 1
    steps = []
    for step in range(n - 1):
        best = None
        for ai, p in enumerate(active):
            for q in active[ai + 1:]:
                key = (D[p, q],) + tuple(sorted((ids[p], ids[q])))
                if best is None or key < best[0]:
                    best = (key, p, q)
        (h, lo, hi), p, q = best
        r = n + step
        ids[r] = base + step
        counts[r] = counts[p] + counts[q]
        active = [a for a in active if a not in (p, q)]
        for a in active:
            D[r, a] = D[a, r] = max(D[p, a], D[q, a])
        active.append(r)
        steps.append(MergeStep(lo, hi, float(h), ids[r], counts[r]))
    return LinkageTree(tuple(labels), tuple(steps))


def cut_tree(tree: LinkageTree, k: int) -> dict:
    """Gesture -> cluster id in 1..k, clusters numbered by smallest member."""
    n = len(tree.leaves)
    if not 1 <= k <= n:
        raise ArgumentError(f"k must lie in [1, {n}], got {k}")
    parent = {a: a for a in tree.leaves}
    for s in tree.steps[:n - k]:
        parent[s.new_id] = s.new_id
        parent[s.left_id] = s.new_id
        parent[s.right_id] = s.new_id

    def root(a):
        while parent[a] != a:
            a = parent[a]
        return a

    groups = {}
    for a in sorted(tree.leaves):
        groups.setdefault(root(a), []).append(a)
    ordered = sorted(groups.values(), key=lambda m: m[0])
    return {a: i + 1 for i, m in enumerate(ordered) for a in m}


def gesture_energy(table: FeatureTable) -> dict:
    """Mean RMS over channels and windows for each gesture in ``table``."""
    cols = [i for i, (f, ch) in enumerate(zip(table.families, table.channels)) if f == "RMS" and ch != 0]
    if not cols:
        raise DataError("table has no per-channel RMS columns")
    V = table.values[:, cols]
    return {int(g): float(V[table.gesture == g].mean()) for g in np.unique(table.gesture)}


def select_representatives(assignment: dict, table: FeatureTable, rest_label: int = REST_LABEL) -> list:
    """Highest-energy gesture per cluster (ties to the lowest label), then rest."""
    energy = gesture_energy(table)
    missing = sorted(g for g in energy if g != rest_label and g not in assignment)
    if missing:
        raise DataError(f"assignment does not cover gestures {missing}")
    clusters = {}
    for g, c in assignment.items():
        clusters.setdefault(c, []).append(g)
    reps = []
    for c in sorted(clusters):
        present = [g for g in sorted(clusters[c]) if g in energy]
        if not present:
            raise DataError(f"cluster {c} has no windows in the table")
        reps.append(max(present, key=lambda g: (energy[g], -g)))
    if rest_label not in reps:
        reps.append(rest_label)
    return reps


def assignment_csv(assignment: dict) -> str:
    return "gesture,cluster\n" + "".join(f"{g},{c}\n" for g, c in sorted(assignment.items()))


def cluster_gestures(table: FeatureTable, k: int = 6, lam: float = 1e-6) -> dict:
    """Summaries, linkage, cut and representatives in one call."""
    summaries, cov = summarize_gestures(table, lam)
    labels, D = distance_matrix(summaries, cov)
    tree = complete_linkage(D, labels)
    assignment = cut_tree(tree, k)
    return {"summaries": summaries, "covariance": cov, "labels": labels, "distances": D,
            "tree": tree, "assignment": assignment,
            "representatives": select_representatives(assignment, table)}
