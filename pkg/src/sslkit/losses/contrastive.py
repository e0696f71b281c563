"""InfoNCE-family losses: SimCLR, MoCo V2+, NNCLR and supervised contrastive."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from ..ndiff import ShapeError, l2_normalize, log_softmax
from .queue import EmptyQueueError, FeatureQueue


def nt_xent(z1: torch.Tensor, z2: torch.Tensor, temperature: float = 0.2) -> torch.Tensor:
    """Normalized temperature-scaled cross entropy over the ``2B`` stacked views.

    Each embedding's positive is the other view of the same sample; the other
    ``2B - 2`` embeddings are negatives.
    """
    if z1.shape != z2.shape:
        raise ShapeError("nt_xent", {"z1": tuple(z1.shape), "z2": tuple(z2.shape)})
    b = z1.shape[0]
    if b < 2:
        raise ValueError("nt_xent needs a batch of at least 2 (no negatives otherwise)")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = l2_normalize(torch.cat([z1, z2]), axis=1)
    logits = z @ z.T / temperature
    self_mask = torch.eye(2 * b, dtype=torch.bool)
    logits = logits.masked_fill(self_mask, float("-inf"))
    targets = torch.cat([torch.arange(b, 2 * b), torch.arange(b)])
    return F.cross_entropy(logits, targets)


def infonce_queue(
    q: torch.Tensor,
    k_pos: torch.Tensor,
    queue: FeatureQueue,
    temperature: float = 0.2,
) -> torch.Tensor:
    """MoCo loss of queries against their key and the queued negatives.

    Keys and queue entries are treated as constants.
    """
    if queue.filled == 0:
        raise EmptyQueueError("infonce_queue: queue has no negatives")
    if q.shape != k_pos.shape:
        raise ShapeError("infonce_queue", {"q": tuple(q.shape), "k_pos": tuple(k_pos.shape)})
    q = l2_normalize(q, axis=1)
    k = l2_normalize(k_pos.detach(), axis=1)
    negatives = queue.entries().detach().to(q.dtype)
    pos = (q * k).sum(dim=1, keepdim=True)
    neg = q @ negatives.T
    logits = torch.cat([pos, neg], dim=1) / temperature
    return F.cross_entropy(logits, torch.zeros(q.shape[0], dtype=torch.long))


def _inbatch_infonce(anchors: torch.Tensor, preds: torch.Tensor, temperature: float) -> torch.Tensor:
    logits = l2_normalize(anchors, axis=1) @ l2_normalize(preds, axis=1).T / temperature
    return F.cross_entropy(logits, torch.arange(anchors.shape[0]))


def nnclr_loss(
    z1: torch.Tensor,
    z2: torch.Tensor,
    p1: torch.Tensor,
    p2: torch.Tensor,
    queue: FeatureQueue,
    temperature: float = 0.2,
) -> torch.Tensor:
    """Nearest-neighbour contrastive loss.

    The support-set neighbour of each projection acts as the positive for the
    other view's prediction; other predictions in the batch are negatives.
    """
    nn1 = queue.nearest(z1)
    nn2 = queue.nearest(z2)
    return 0.5 * (_inbatch_infonce(nn1, p2, temperature) + _inbatch_infonce(nn2, p1, temperature))


def supcon_loss(z: torch.Tensor, labels: torch.Tensor, temperature: float = 0.1) -> torch.Tensor:
    """Supervised contrastive loss; anchors without any positive are skipped."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if labels.shape[0] != z.shape[0]:
        raise ShapeError("supcon_loss", {"z": tuple(z.shape), "labels": tuple(labels.shape)})
    n = z.shape[0]
    zn = l2_normalize(z, axis=1)
    logits = zn @ zn.T / temperature
    self_mask = torch.eye(n, dtype=torch.bool)
    log_prob = log_softmax(logits.masked_fill(self_mask, float("-inf")), axis=1)
    pos_mask = (labels[:, None] == labels[None, :]) & ~self_mask
    n_pos = pos_mask.sum(dim=1)
    valid = n_pos > 0
    if not valid.any():
        raise ValueError("supcon_loss: no anchor has a positive")
    pos_log_prob = torch.where(pos_mask, log_prob, torch.zeros_like(log_prob)).sum(dim=1)
    per_anchor = -pos_log_prob[valid] / n_pos[valid]
    return per_anchor.mean()
