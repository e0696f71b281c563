from __future__ import annotations

from typing import Sequence

import torch

from ..ndiff import ShapeError, cholesky, l2_normalize, triangular_solve


def whiten(z: torch.Tensor, eps: float = 1e-4) -> torch.Tensor:
    """Whiten a batch with the inverse Cholesky factor of its covariance."""
    b, d = z.shape
    if b <= d:
        raise ValueError(
            f"whiten: batch of {b} rows cannot whiten {d} dims; use a sub-batch of at least {d + 1}"
        )
    zc = z - z.mean(dim=0)
    cov = zc.T @ zc / (b - 1) + eps * torch.eye(d, dtype=z.dtype)
    cov = (cov + cov.T) / 2
    low = cholesky(cov)
    return triangular_solve(low, zc.T, lower=True).T


def wmse_loss(views: Sequence[torch.Tensor], sub_batch: int = 64, eps: float = 1e-4) -> torch.Tensor:
    """Mean squared distance between normalized whitened positives.

    The batch is split into consecutive sub-batches of ``sub_batch`` rows (a
    smaller batch is used whole); each view of each sub-batch is whitened
    separately. The loss averages ``2 - 2 cos`` over all view pairs and
    sub-batches.
    """
    if len(views) < 2:
        raise ValueError("wmse_loss needs at least two views")
    b, d = views[0].shape
    for v in views[1:]:
        if v.shape != views[0].shape:
            raise ShapeError("wmse_loss", {"view0": tuple(views[0].shape), "view": tuple(v.shape)})
    if sub_batch <= d:
        raise ValueError(f"wmse_loss: sub_batch {sub_batch} must exceed embedding dim {d}")
    size = min(sub_batch, b)
    chunks = max(1, b // size)
    total, terms = 0.0, 0
    for c in range(chunks):
        rows = slice(c * size, (c + 1) * size)
        white = [l2_normalize(whiten(v[rows], eps), axis=1) for v in views]
        for i in range(len(white)):
            for j in range(i + 1, len(white)):
                total = total + (2 - 2 * (white[i] * white[j]).sum(dim=1)).mean()
                terms += 1
    return total / terms
