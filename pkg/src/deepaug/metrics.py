"""Representation analysis: linear CKA, alignment/uniformity, linear probe."""
import hashlib
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import pdist

from . import autodiff as ad
from .errors import ContractError, DegenerateInputError, DimensionError
from .rng import Stream


def _as64(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _centered(x):
    x = _as64(x)
    if x.ndim != 2:
        raise DimensionError("linear_cka", x.shape, detail="expected [n x w]")
    return x - x.mean(axis=0, keepdims=True)


def linear_cka(X, Y) -> float:
    """Linear CKA: ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F) on column-centered inputs."""
    X, Y = _centered(X), _centered(Y)
    if X.shape[0] != Y.shape[0] or X.shape[0] < 2:
        raise DimensionError("linear_cka", X.shape, Y.shape, detail="need the same n >= 2")
    xx = np.linalg.norm(X.T @ X)
    yy = np.linalg.norm(Y.T @ Y)
    if xx == 0 or yy == 0:
        raise DegenerateInputError("linear_cka: zero-variance input (all rows identical)")
    return float(np.linalg.norm(Y.T @ X) ** 2 / (xx * yy))


def cka_matrix(activations) -> np.ndarray:
    acts = [_centered(a) for a in activations]
    n = len(acts)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = linear_cka(acts[i], acts[j])
    return out


def _check_unit_rows(f, what, tol=1e-3):
    norms = np.linalg.norm(f, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ContractError(f"{what}: rows must be l2-normalized (max deviation {np.abs(norms - 1).max():.3g})")


def alignment(f1, f2, alpha: float = 2.0) -> float:
    """Mean of ||f1_i - f2_i||^alpha over positive pairs."""
    f1, f2 = _as64(f1), _as64(f2)
    if f1.shape != f2.shape or f1.ndim != 2 or f1.shape[0] < 1:
        raise DimensionError("alignment", f1.shape, f2.shape)
    if not alpha > 0:
        raise ContractError(f"alignment: alpha must be > 0, got {alpha}")
    _check_unit_rows(f1, "alignment")
    _check_unit_rows(f2, "alignment")
    return float(np.mean(np.linalg.norm(f1 - f2, axis=1) ** alpha))


def uniformity(f, t: float = 2.0) -> float:
    """log of the mean over pairs i<j of exp(-t ||f_i - f_j||^2)."""
    f = _as64(f)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ContractError(f"uniformity: need at least 2 rows, got shape {f.shape}")
    if not t > 0:
        raise ContractError(f"uniformity: t must be > 0, got {t}")
    _check_unit_rows(f, "uniformity")
    return float(np.log(np.mean(np.exp(-t * pdist(f, "sqeuclidean")))))


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 200
    lr: float = 0.1
    seed: int = 0
    standardize: bool = True

    def digest(self) -> str:
        text = ";".join(f"{k}={v}" for k, v in asdict(self).items())
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def linear_probe(features, labels, train_idx, val_idx, config: ProbeConfig = ProbeConfig()) -> float:
    """Softmax regression on frozen features by full-batch gradient descent; returns val accuracy.

    Features are standardized with train-split statistics when ``config.standardize``.
    """
    feats = np.asarray(getattr(features, "data", features), dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)
    classes = np.unique(labels[train_idx])
    if classes.size < 2:
        raise ContractError("linear_probe: train split must contain at least 2 classes")
    k = int(labels.max()) + 1
    xtr, xva = feats[train_idx], feats[val_idx]
    if config.standardize:
        mu = xtr.mean(axis=0)
        sd = xtr.std(axis=0)
        sd[sd == 0] = 1.0
        xtr, xva = (xtr - mu) / sd, (xva - mu) / sd
    d = feats.shape[1]
    a = np.sqrt(6.0 / (d + k))
    w = ((2.0 * Stream.of(config.seed, "probe").uniform((d, k)) - 1.0) * a).astype(np.float32)
    b = np.zeros(k, dtype=np.float32)
    onehot = np.eye(k, dtype=np.float32)[labels[train_idx]]
    lr = np.float32(config.lr)
    for _ in range(config.epochs):
        g = ad.Graph()
        wt, bt = g.leaf(w), g.leaf(b)
        logits = ad.add(ad.matmul(xtr, wt), bt)
        shift = logits.data.max(axis=1, keepdims=True)
        shifted = ad.add(logits, -np.broadcast_to(shift, logits.shape))
        lse = ad.log(ad.sum_(ad.exp(shifted), axis=1))
        picked = ad.sum_(ad.mul(shifted, onehot), axis=1)
        loss = ad.mean(ad.add(lse, ad.scale(picked, -1.0)))
        grads = g.backward(loss)
        w = w - lr * grads.of(wt)
        b = b - lr * grads.of(bt)
    pred = np.argmax(xva @ w + b, axis=1)
    return float(np.mean(pred == labels[val_idx]))
