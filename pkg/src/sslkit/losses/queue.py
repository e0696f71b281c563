from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

from ..ndiff import ShapeError, l2_normalize


class EmptyQueueError(RuntimeError):
    pass


class FeatureQueue(nn.Module):
    """Fixed-capacity FIFO of L2-normalized embeddings.

    Slots are written in order ``0, 1, ..., Q-1`` and then wrap, so the filled
    region is always ``storage[:fill]``. All state lives in buffers and is
    therefore part of ``state_dict``.
    """

    def __init__(self, capacity: int, dim: int, with_labels: bool = False):
        super().__init__()
        if capacity < 1 or dim < 1:
            raise ValueError(f"queue capacity and dim must be >= 1, got {capacity}, {dim}")
        self.capacity = capacity
        self.dim = dim
        self.register_buffer("storage", torch.zeros(capacity, dim))
        self.register_buffer("labels", torch.full((capacity,), -1, dtype=torch.long) if with_labels else None)
        self.register_buffer("cursor", torch.zeros((), dtype=torch.long))
        self.register_buffer("fill", torch.zeros((), dtype=torch.long))

    @property
    def filled(self) -> int:
        return int(self.fill)

    def entries(self) -> torch.Tensor:
        return self.storage[: self.filled].clone()

    @torch.no_grad()
    def enqueue(self, z: torch.Tensor, labels: Optional[torch.Tensor] = None) -> None:
        if z.dim() != 2 or z.shape[1] != self.dim:
            raise ShapeError("queue_enqueue", {"z": tuple(z.shape), "queue": (self.capacity, self.dim)})
        z = l2_normalize(z.detach().to(self.storage.dtype), axis=1)
        if z.shape[0] > self.capacity:
            z = z[-self.capacity :]
            labels = labels[-self.capacity :] if labels is not None else None
        n = z.shape[0]
        slots = (int(self.cursor) + torch.arange(n)) % self.capacity
        self.storage[slots] = z
        if self.labels is not None and labels is not None:
            self.labels[slots] = labels.to(torch.long)
        self.cursor.fill_((int(self.cursor) + n) % self.capacity)
        self.fill.fill_(min(self.capacity, self.filled + n))

    @torch.no_grad()
    def nearest(self, z: torch.Tensor) -> torch.Tensor:
        """Per row of ``z``, the filled entry with highest cosine similarity.

        Ties go to the lowest slot index. The result is detached.
        """
        if self.filled == 0:
            raise EmptyQueueError("queue_nearest: queue is empty")
        if z.dim() != 2 or z.shape[1] != self.dim:
            raise ShapeError("queue_nearest", {"z": tuple(z.shape), "queue": (self.capacity, self.dim)})
        bank = self.entries()
        sim = l2_normalize(z.detach().to(bank.dtype), axis=1) @ bank.T
        idx = sim.argmax(dim=1)
        return bank[idx].to(z.dtype)


def queue_enqueue(q: FeatureQueue, z: torch.Tensor, labels: Optional[torch.Tensor] = None) -> None:
    q.enqueue(z, labels)


def queue_nearest(q: FeatureQueue, z: torch.Tensor) -> torch.Tensor:
    return q.nearest(z)
