from __future__ import annotations

import math
from typing import Optional, Sequence

import torch

from ..ndiff import l2_normalize, log_softmax


@torch.no_grad()
def sinkhorn(scores: torch.Tensor, epsilon: float = 0.05, iters: int = 3) -> torch.Tensor:
    """Balanced soft assignment of ``B`` samples to ``K`` prototypes.

    Starting from ``exp(scores / epsilon)``, columns are rescaled to the uniform
    prototype marginal and rows to the uniform sample marginal, alternately.
    The row step comes last and the result is scaled so each row sums to 1.
    Normalization runs on logarithms so that extreme scores cannot underflow a
    whole row or column to zero.
    """
    if epsilon <= 0:
        raise ValueError("sinkhorn: epsilon must be positive")
    if not torch.isfinite(scores).all():
        raise ValueError("sinkhorn: scores must be finite")
    b, k = scores.shape
    log_q = (scores - scores.max()) / epsilon
    log_q = log_q - torch.logsumexp(log_q.reshape(-1), dim=0)
    for _ in range(iters):
        log_q = log_q - torch.logsumexp(log_q, dim=0, keepdim=True) - math.log(k)
        log_q = log_q - torch.logsumexp(log_q, dim=1, keepdim=True) - math.log(b)
    return torch.softmax(log_q, dim=1)


def swav_loss(
    z1: torch.Tensor,
    z2: torch.Tensor,
    prototypes: torch.Tensor,
    temperature: float = 0.1,
    epsilon: float = 0.05,
    iters: int = 3,
    codes: Optional[Sequence[torch.Tensor]] = None,
) -> torch.Tensor:
    """Swapped prediction: each view predicts the other view's Sinkhorn codes.

    ``codes`` may be passed to reuse assignments computed elsewhere; they are
    treated as constants either way.
    """
    if z1.shape[0] < 2:
        raise ValueError("swav_loss needs a batch of at least 2")
    scores = [l2_normalize(z, axis=1) @ prototypes.T for z in (z1, z2)]
    if codes is None:
        codes = [sinkhorn(s.detach(), epsilon, iters) for s in scores]
    codes = [q.detach() for q in codes]
    loss = 0.0
    for v, s in enumerate(scores):
        q = codes[1 - v]
        loss = loss - (q * log_softmax(s / temperature, axis=1)).sum(dim=1).mean()
    return loss / 2
