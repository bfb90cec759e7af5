"""Normalized temperature-scaled contrastive loss over view-pair batches.

Embeddings arrive unit-normalized, so the pairwise dot product is the
cosine similarity. Rows 2k and 2k+1 form the positive pair; every other row
in the batch acts as a negative. All exponentials are max-stabilized.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _record, _tracking


class LossError(ValueError):
    pass


def pairwise_similarity(z):
    """Cosine similarity matrix [2N, 2N] from unit-normalized rows.

    ``z`` may be a Tensor or ndarray; rows whose norm deviates from 1 by
    more than 1e-3 are rejected.
    """
    arr = z.data if isinstance(z, Tensor) else np.asarray(z)
    norms = np.linalg.norm(arr, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-3):
        raise LossError("pairwise_similarity expects unit-normalized rows")
    return arr @ arr.T


def pair_loss(sim, i, j, tau):
    """Contrastive loss of the ordered pair (i, j) from a similarity matrix.

    -log( exp(S[i,j]/tau) / sum_{k != i} exp(S[i,k]/tau) ).
    """
    if tau <= 0:
        raise LossError("temperature must be positive")
    if i == j:
        raise LossError("pair_loss needs distinct indices")
    s = np.asarray(sim, dtype=np.float64) / tau
    row = np.delete(s[i], i)
    m = row.max()
    denom = np.log(np.exp(row - m).sum()) + m
    return float(denom - s[i, j])


def batch_loss(z, tau):
    """Mean NT-Xent loss over both directions of every pair; differentiable.

    ``z`` is [2N, 128] with pair layout (0,1), (2,3), ... The result equals
    (1/2N) * sum_k [l(2k, 2k+1) + l(2k+1, 2k)].
    """
    if tau <= 0:
        raise LossError("temperature must be positive")
    rows = z.shape[0]
    if rows % 2 != 0 or rows < 2:
        raise LossError(f"batch needs an even row count >= 2, got {rows}")
    n2 = rows
    sim = z.data @ z.data.T
    p = sim / tau
    pos = np.arange(n2) ^ 1  # partner row under the 2k/2k+1 layout

    mask_self = np.eye(n2, dtype=bool)
    p_masked = np.where(mask_self, -np.inf, p)
    m = p_masked.max(axis=1, keepdims=True)
    ez = np.exp(p_masked - m)
    denom = ez.sum(axis=1, keepdims=True)
    logsumexp = np.log(denom)[:, 0] + m[:, 0]
    losses = logsumexp - p[np.arange(n2), pos]
    out = Tensor(losses.mean(), dtype=z.dtype)

    if _tracking(z):
        # dL/dP = (softmax over non-self entries - positive indicator) / 2N
        soft = ez / denom
        gp = soft.copy()
        gp[np.arange(n2), pos] -= 1.0
        gp /= n2

        def bwd(g):
            gsim = gp * (g / tau)
            return ((gsim + gsim.T) @ z.data,)

        _record(out, (z,), bwd)
    return out
