"""One-hidden-layer ReLU network with softmax output, trained with Adam."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..errors import DivergenceError

PARAM_NAMES = ("W1", "b1", "W2", "b2")
OUTPUT_INIT_GAIN = 0.1


def init_params(n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator) -> dict:
    """He-uniform weights, zero biases.

    The output layer's He bound is scaled by ``OUTPUT_INIT_GAIN`` so initial
    logits are near zero and the starting loss sits close to ln(C).
    """
    lim1 = np.sqrt(6.0 / n_in)
    lim2 = np.sqrt(6.0 / n_hidden) * OUTPUT_INIT_GAIN
    return {
        "W1": rng.uniform(-lim1, lim1, size=(n_in, n_hidden)),
        "b1": np.zeros(n_hidden),
        "W2": rng.uniform(-lim2, lim2, size=(n_hidden, n_out)),
        "b2": np.zeros(n_out),
    }


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: dict, X: np.ndarray) -> np.ndarray:
    h = np.maximum(X @ params["W1"] + params["b1"], 0.0)
    return softmax(h @ params["W2"] + params["b2"])


def loss_and_grads(params: dict, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and its gradients.

    ``y`` holds class indices. Gradients are returned in a dict keyed like
    ``params``.
    """
    B = X.shape[0]
    pre = X @ params["W1"] + params["b1"]
    h = np.maximum(pre, 0.0)
    z = h @ params["W2"] + params["b2"]
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(B), y]))
    p = np.exp(z - logsum[:, None])
    dz = p.copy()
    dz[np.arange(B), y] -= 1.0
    dz /= B
    dh = dz @ params["W2"].T
    dpre = dh * (pre > 0)
    grads = {"W1": X.T @ dpre, "b1": dpre.sum(axis=0), "W2": h.T @ dz, "b2": dz.sum(axis=0)}
    return loss, grads


def loss_only(params: dict, X: np.ndarray, y: np.ndarray) -> float:
    p = forward(params, X)
    return float(-np.mean(np.log(np.maximum(p[np.arange(X.shape[0]), y], 1e-300))))


def gradient_check(params, X: np.ndarray, y: np.ndarray, step: float = 1e-5) -> float:
    """Max relative gap between backprop and central finite differences.

    ``params`` may be a parameter dict or a zero-argument callable returning
    one. The error for each scalar parameter is
    ``|g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-8)``.
    """
    if callable(params):
        params = params()
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    X = np.asarray(X, dtype=np.float64)
    _, grads = loss_and_grads(params, X, y)
    worst = 0.0
    for name in PARAM_NAMES:
        p = params[name]
        flat = p.reshape(-1)
        g_bp = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_only(params, X, y)
            flat[i] = orig - step
            lm = loss_only(params, X, y)
            flat[i] = orig
            g_fd = (lp - lm) / (2 * step)
            denom = max(abs(g_bp[i]), abs(g_fd), 1e-8)
            worst = max(worst, abs(g_bp[i] - g_fd) / denom)
    return worst


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k in params:
            self.m[k] = b1 * self.m[k] + (1 - b1) * grads[k]
            self.v[k] = b2 * self.v[k] + (1 - b2) * grads[k] ** 2
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def fit(X: np.ndarray, y: np.ndarray, n_classes: int, *, hidden_units: int, epochs: int, batch_size: int,
        learning_rate: float, rng: np.random.Generator, X_val: Optional[np.ndarray] = None,
        y_val: Optional[np.ndarray] = None, patience: int = 20, weight_decay: float = 0.0,
        on_step: Optional[Callable] = None):
    """Mini-batch training. Returns ``(params, history)``.

    ``history`` has per-epoch full-training-set loss (and validation loss
    when a validation set is given). With validation data, training stops
    after ``patience`` epochs without improvement and the best parameters
    are restored.
    """
    params = init_params(X.shape[1], hidden_units, n_classes, rng)
    opt = Adam(params, lr=learning_rate)
    history = {"train_loss": [], "val_loss": []}
    best, best_params, bad_epochs = np.inf, None, 0
    n = X.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            b = order[start:start + batch_size]
            loss, grads = loss_and_grads(params, X[b], y[b])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1} (learning rate {learning_rate})")
            if weight_decay:
                grads["W1"] = grads["W1"] + weight_decay * params["W1"]
                grads["W2"] = grads["W2"] + weight_decay * params["W2"]
            opt.step(params, grads)
            if on_step is not None:
                on_step(params)
        train_loss = loss_only(params, X, y)
        if not np.isfinite(train_loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch + 1} (learning rate {learning_rate})")
        history["train_loss"].append(train_loss)
        if X_val is not None and len(X_val):
            vl = loss_only(params, X_val, y_val)
            history["val_loss"].append(vl)
            if vl < best - 1e-12:
                best, bad_epochs = vl, 0
                best_params = {k: v.copy() for k, v in params.items()}
            else:
                bad_epochs += 1
                if bad_epochs >= patience:
                    break
    if best_params is not None:
        params = best_params
    return params, history
