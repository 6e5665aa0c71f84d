"""k-nearest-neighbour vote with distance-weighted tie-break."""
import numpy as np


def pairwise_sq_dist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # direct differences keep exact ties exact (no norm-expansion rounding)
    return ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)


def knn_vote(X_train, y_train, X, k: int, n_classes: int, max_cells: int = 4_000_000):
    """Return ``(labels, vote_fractions)`` for query rows ``X``.

    Neighbours at equal distance are taken in training order. Among classes
    with the most votes the one with the largest sum of inverse distances
    wins, then the lowest class index.
    """
    chunk = max(1, max_cells // max(1, X_train.shape[0] * X_train.shape[1]))
    labels = np.empty(X.shape[0], dtype=np.int64)
    proba = np.empty((X.shape[0], n_classes))
    for s in range(0, X.shape[0], chunk):
        q = X[s:s + chunk]
        d2 = pairwise_sq_dist(q, X_train)
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
        dist = np.sqrt(np.take_along_axis(d2, nn, axis=1))
        cls = y_train[nn]
        votes = np.zeros((q.shape[0], n_classes))
        weight = np.zeros((q.shape[0], n_classes))
        rows = np.repeat(np.arange(q.shape[0]), k)
        np.add.at(votes, (rows, cls.ravel()), 1.0)
        np.add.at(weight, (rows, cls.ravel()), 1.0 / np.maximum(dist.ravel(), 1e-12))
        top = votes == votes.max(axis=1, keepdims=True)
        w = np.where(top, weight, -np.inf)
        labels[s:s + chunk] = np.argmax(w, axis=1)
        proba[s:s + chunk] = votes / k
    return labels, proba
