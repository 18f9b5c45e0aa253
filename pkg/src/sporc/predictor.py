"""Constraint-parameter networks and linear cost models."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sporc.core import make_rng
from sporc.errors import DimMismatch, Divergence
from sporc.optim import Adam


class MLPPredictor:
    """``x -> W2 relu(W1 x + b1) + b2`` reshaped to ``(m_c, d)``.

    With ``hidden == 0`` the hidden layer is dropped and the model is affine,
    ``x -> W2 x + b2``.
    """

    def __init__(self, W1, b1, W2, b2, m_c, d):
        self.W1 = None if W1 is None else np.asarray(W1, float)
        self.b1 = None if b1 is None else np.asarray(b1, float)
        self.W2 = np.asarray(W2, float)
        self.b2 = np.asarray(b2, float)
        self.m_c = int(m_c)
        self.d = int(d)
        if self.W2.shape[0] != self.m_c * self.d:
            raise DimMismatch(f"output layer has {self.W2.shape[0]} rows, expected {self.m_c * self.d}")
        for arr in self.params:
            if not np.all(np.isfinite(arr)):
                raise Divergence("non-finite predictor weights")

    @property
    def hidden(self):
        return 0 if self.W1 is None else self.W1.shape[0]

    @property
    def p(self):
        return self.W2.shape[1] if self.W1 is None else self.W1.shape[1]

    @property
    def params(self):
        if self.W1 is None:
            return [self.W2, self.b2]
        return [self.W1, self.b1, self.W2, self.b2]

    @classmethod
    def zeros(cls, p, hidden, m_c, d):
        out = m_c * d
        if hidden == 0:
            return cls(None, None, np.zeros((out, p)), np.zeros(out), m_c, d)
        return cls(np.zeros((hidden, p)), np.zeros(hidden), np.zeros((out, hidden)), np.zeros(out), m_c, d)

    def _forward(self, X):
        if self.W1 is None:
            return X @ self.W2.T + self.b2, None, None
        Z = X @ self.W1.T + self.b1
        H = np.maximum(Z, 0.0)
        return H @ self.W2.T + self.b2, H, Z

    def predict_batch(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        if X.shape[1] != self.p:
            raise DimMismatch(f"inputs have {X.shape[1]} features, model expects {self.p}")
        Y, _, _ = self._forward(X)
        return Y.reshape(-1, self.m_c, self.d)

    def predict(self, x):
        x = np.asarray(x, float)
        if x.shape != (self.p,):
            raise DimMismatch(f"x has shape {x.shape}, expected ({self.p},)")
        return self.predict_batch(x[None, :])[0]

    def to_dict(self):
        layers = []
        if self.W1 is not None:
            layers.append({"shape": list(self.W1.shape), "weight": self.W1.ravel().tolist(), "bias": self.b1.tolist()})
        layers.append({"shape": list(self.W2.shape), "weight": self.W2.ravel().tolist(), "bias": self.b2.tolist()})
        return {"kind": "mlp", "activation": "relu", "m_c": self.m_c, "d": self.d, "layers": layers}

    @classmethod
    def from_dict(cls, obj):
        layers = [
            (np.asarray(L["weight"], float).reshape(L["shape"]), np.asarray(L["bias"], float))
            for L in obj["layers"]
        ]
        if len(layers) == 1:
            (W2, b2), W1, b1 = layers[0], None, None
        elif len(layers) == 2:
            (W1, b1), (W2, b2) = layers
        else:
            raise ValueError("checkpoint must have one or two layers")
        return cls(W1, b1, W2, b2, obj["m_c"], obj["d"])


def predict_constraint(model, x):
    return model.predict(x)


def _split_validation(n, fraction, rng):
    perm = rng.permutation(n)
    n_val = int(round(fraction * n)) if n >= 10 else 0
    return perm[n_val:], perm[:n_val]


def fit_constraint_predictor(
    train,
    hidden=32,
    epochs=50,
    lr=1e-3,
    seed=0,
    batch_size=32,
    patience=5,
    val_fraction=0.1,
    history=None,
):
    """Fit ``a ~ g(x)`` by mean squared error with Adam and early stopping.

    Targets are standardized per output during training and the scaling is folded
    back into the output layer. The weights with the best validation loss are
    returned. ``history``, if a list, receives the per-epoch training loss
    (index 0 is the loss before the first update).
    """
    if train.n < 1:
        raise ValueError("need at least one training sample")
    n, p, d, m_c = train.dims
    X = train.x
    T = train.a.reshape(n, m_c * d)
    mu = T.mean(axis=0)
    sd = T.std(axis=0)
    sd[sd < 1e-12] = 1.0
    Tn = (T - mu) / sd

    rng = make_rng(seed, "constraint_predictor")
    out = m_c * d
    # the output layer starts at zero, so the initial prediction is the target mean
    if hidden > 0:
        W1 = rng.standard_normal((hidden, p)) * np.sqrt(2.0 / p)
        b1 = np.zeros(hidden)
        params = [W1, b1, np.zeros((out, hidden)), np.zeros(out)]
    else:
        params = [np.zeros((out, p)), np.zeros(out)]

    tr_idx, val_idx = _split_validation(n, val_fraction, rng)
    opt = Adam(params, lr=lr)

    def forward(Xb):
        if hidden > 0:
            Z = Xb @ params[0].T + params[1]
            H = np.maximum(Z, 0.0)
            return H @ params[2].T + params[3], H, Z
        return Xb @ params[0].T + params[1], None, None

    def loss_on(idx):
        if idx.size == 0:
            return math.nan
        Y, _, _ = forward(X[idx])
        return float(np.mean((Y - Tn[idx]) ** 2))

    best = [q.copy() for q in params]
    best_val = loss_on(val_idx) if val_idx.size else math.inf
    stale = 0
    if history is not None:
        history.append(loss_on(tr_idx))
    for _ in range(epochs):
        order = rng.permutation(tr_idx)
        for start in range(0, order.size, batch_size):
            b = order[start:start + batch_size]
            Xb, Tb = X[b], Tn[b]
            Y, H, Z = forward(Xb)
            G = 2.0 * (Y - Tb) / (Y.size)
            if hidden > 0:
                gW2 = G.T @ H
                gb2 = G.sum(axis=0)
                GH = (G @ params[2]) * (Z > 0)
                grads = [GH.T @ Xb, GH.sum(axis=0), gW2, gb2]
            else:
                grads = [G.T @ Xb, G.sum(axis=0)]
            opt.step(grads)
        tr_loss = loss_on(tr_idx)
        if not math.isfinite(tr_loss):
            raise Divergence("constraint predictor loss became non-finite")
        if history is not None:
            history.append(tr_loss)
        if val_idx.size:
            val = loss_on(val_idx)
            if val < best_val:
                best_val, stale = val, 0
                best = [q.copy() for q in params]
            else:
                stale += 1
                if stale >= patience:
                    break
        else:
            best = [q.copy() for q in params]

    # fold the target standardization into the output layer
    W_out, b_out = best[-2] * sd[:, None], best[-1] * sd + mu
    if hidden > 0:
        return MLPPredictor(best[0], best[1], W_out, b_out, m_c, d)
    return MLPPredictor(None, None, W_out, b_out, m_c, d)


# ---------------------------------------------------------------------------
# cost models


@dataclass
class LinearCostModel:
    """``c_hat = B x + intercept``."""

    B: np.ndarray
    intercept: np.ndarray | None = None

    def __post_init__(self):
        self.B = np.array(self.B, dtype=float)
        if self.intercept is not None:
            self.intercept = np.array(self.intercept, dtype=float)
        if not np.all(np.isfinite(self.B)) or (
            self.intercept is not None and not np.all(np.isfinite(self.intercept))
        ):
            raise Divergence("non-finite cost model parameters")

    @property
    def d(self):
        return self.B.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    def predict_batch(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        if X.shape[1] != self.p:
            raise DimMismatch(f"inputs have {X.shape[1]} features, model expects {self.p}")
        out = X @ self.B.T
        if self.intercept is not None:
            out = out + self.intercept
        return out

    def predict(self, x):
        return self.predict_batch(np.asarray(x, float)[None, :])[0]

    def copy(self):
        return LinearCostModel(self.B.copy(), None if self.intercept is None else self.intercept.copy())

    def to_dict(self):
        obj = {"kind": "linear", "shape": list(self.B.shape), "weight": self.B.ravel().tolist()}
        if self.intercept is not None:
            obj["bias"] = self.intercept.tolist()
        return obj

    @classmethod
    def from_dict(cls, obj):
        B = np.asarray(obj["weight"], float).reshape(obj["shape"])
        bias = obj.get("bias")
        return cls(B, None if bias is None else np.asarray(bias, float))


def _check_weights(weights, n):
    if weights is None:
        return None
    w = np.asarray(weights, float).ravel()
    if w.shape != (n,):
        raise DimMismatch(f"weights have length {w.size}, expected {n}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample weights must be finite and nonnegative")
    if w.sum() <= 0:
        raise ValueError("sample weights sum to zero")
    return w


def fit_mse_baseline(
    train,
    weights=None,
    epochs=50,
    lr=1e-2,
    seed=0,
    intercept=True,
    method="lstsq",
    batch_size=32,
    patience=5,
    val_fraction=0.1,
):
    """(Weighted) least-squares linear cost model.

    ``method="lstsq"`` returns the exact weighted least-squares solution;
    ``method="adam"`` runs mini-batch Adam with early stopping, the way neural
    baselines are usually trained.
    """
    n = train.n
    if n < 1:
        raise ValueError("need at least one training sample")
    w = _check_weights(weights, n)
    X, C = train.x, train.c
    Xa = np.hstack([X, np.ones((n, 1))]) if intercept else X
    if method == "lstsq":
        sw = np.ones(n) if w is None or np.all(w == w[0]) else np.sqrt(w / w.mean())
        coef, *_ = np.linalg.lstsq(Xa * sw[:, None], C * sw[:, None], rcond=None)
        coef = coef.T
    elif method == "adam":
        coef = _mse_adam(Xa, C, w, epochs, lr, seed, batch_size, patience, val_fraction)
    else:
        raise ValueError(f"unknown method {method!r}")
    if intercept:
        return LinearCostModel(coef[:, :-1], coef[:, -1])
    return LinearCostModel(coef)


def _mse_adam(Xa, C, w, epochs, lr, seed, batch_size, patience, val_fraction):
    n = Xa.shape[0]
    w = np.ones(n) if w is None else w / w.mean()
    rng = make_rng(seed, "mse_baseline")
    coef = np.zeros((C.shape[1], Xa.shape[1]))
    opt = Adam([coef], lr=lr)
    tr_idx, val_idx = _split_validation(n, val_fraction, rng)

    def loss(idx):
        R = Xa[idx] @ coef.T - C[idx]
        return float(np.sum(w[idx, None] * R**2) / max(w[idx].sum(), 1e-300))

    best, best_val, stale = coef.copy(), math.inf, 0
    for _ in range(epochs):
        order = rng.permutation(tr_idx)
        for start in range(0, order.size, batch_size):
            b = order[start:start + batch_size]
            R = Xa[b] @ coef.T - C[b]
            G = 2.0 * (w[b, None] * R).T @ Xa[b] / b.size
            opt.step([G])
        if not np.all(np.isfinite(coef)):
            raise Divergence("MSE baseline diverged")
        if val_idx.size:
            val = loss(val_idx)
            if val < best_val:
                best, best_val, stale = coef.copy(), val, 0
            else:
                stale += 1
                if stale >= patience:
                    break
        else:
            best = coef.copy()
    return best


def save_model(path, model):
    Path(path).write_text(json.dumps(model.to_dict()), encoding="utf-8")


def load_model(path):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("kind") == "linear":
        return LinearCostModel.from_dict(obj)
    return MLPPredictor.from_dict(obj)
