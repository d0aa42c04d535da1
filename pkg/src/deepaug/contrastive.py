"""InfoNCE over paired views."""
import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError


def cosine_sim(u, v) -> float:
    u = np.asarray(getattr(u, "data", u), dtype=np.float64).ravel()
    v = np.asarray(getattr(v, "data", v), dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError("cosine_sim", u.shape, v.shape)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ContractError("cosine_sim: zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _row_loss(logits):
    # -log softmax of the diagonal entry per row, max-shifted log-sum-exp.
    shift = logits.data.max(axis=1, keepdims=True)
    shifted = ad.add(logits, -np.broadcast_to(shift, logits.shape))
    lse = ad.add(ad.log(ad.sum_(ad.exp(shifted), axis=1)), shift[:, 0])
    eye = np.eye(logits.shape[0], dtype=logits.data.dtype)
    positive = ad.sum_(ad.mul(logits, eye), axis=1)
    return ad.mean(ad.add(lse, ad.scale(positive, -1.0)))


def info_nce(h1, h2, tau: float = 0.5, symmetric: bool = False) -> ad.Tensor:
    """Mean over i of -log(exp(s_ii/tau) / sum_j exp(s_ij/tau)), s = cosine similarity.

    Negatives for row i of ``h1`` are the rows of ``h2``. With ``symmetric`` the
    view-swapped term is averaged in.
    """
    if not tau > 0:
        raise ContractError(f"info_nce: tau must be > 0, got {tau}")
    like = h1 if isinstance(h1, ad.Tensor) else h2 if isinstance(h2, ad.Tensor) else None
    h1, h2 = ad._wrap(h1, like), ad._wrap(h2, like)
    if h1.data.ndim != 2 or h1.shape != h2.shape or h1.shape[0] < 1:
        raise DimensionError("info_nce", h1.shape, h2.shape)
    z1 = ad.l2_normalize_rows(h1)
    z2 = ad.l2_normalize_rows(h2)
    logits = ad.scale(ad.matmul(z1, ad.transpose(z2)), 1.0 / tau)
    loss = _row_loss(logits)
    if symmetric:
        loss = ad.scale(ad.add(loss, _row_loss(ad.transpose(logits))), 0.5)
    return loss
