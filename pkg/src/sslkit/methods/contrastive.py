"""Methods trained with an InfoNCE-style objective."""

from __future__ import annotations

import torch

from ..losses import FeatureQueue, infonce_queue, nnclr_loss, nt_xent, supcon_loss
from ..models import MlpHead
from .base import Method


class SimCLR(Method):
    def compute_loss(self, batch):
        h1, z1 = self.encoder(batch.views[0])
        _, z2 = self.encoder(batch.views[1])
        return nt_xent(z1, z2, self.cfg.temperature), {}, h1


class SupCon(Method):
    uses_labels = True

    def compute_loss(self, batch):
        h1, z1 = self.encoder(batch.views[0])
        _, z2 = self.encoder(batch.views[1])
        labels = torch.cat([batch.labels, batch.labels])
        return supcon_loss(torch.cat([z1, z2]), labels, self.cfg.temperature), {}, h1


class MoCoV2Plus(Method):
    """Momentum contrast with a key queue; the loss is averaged over both directions.

    When the queue is empty the current keys are enqueued before the loss
    instead of after it, so each step adds exactly one batch of keys.
    """

    uses_target = True

    def __init__(self, cfg):
        super().__init__(cfg)
        self.queue = FeatureQueue(cfg.queue_size, cfg.proj_out)

    def compute_loss(self, batch):
        h1, q1 = self.encoder(batch.views[0])
        _, q2 = self.encoder(batch.views[1])
        k1 = self.target_forward(batch.views[0])
        k2 = self.target_forward(batch.views[1])
        primed = self.queue.filled == 0
        if primed:
            self.queue.enqueue(k1)
        t = self.cfg.temperature
        loss = 0.5 * (infonce_queue(q1, k2, self.queue, t) + infonce_queue(q2, k1, self.queue, t))
        if not primed:
            self.queue.enqueue(k1)
        return loss, {"queue_fill": float(self.queue.filled)}, h1


class NNCLR(Method):
    def __init__(self, cfg):
        super().__init__(cfg)
        self.predictor = MlpHead([cfg.proj_out, cfg.pred_hidden, cfg.proj_out])
        self.queue = FeatureQueue(cfg.queue_size, cfg.proj_out)

    def compute_loss(self, batch):
        h1, z1 = self.encoder(batch.views[0])
        _, z2 = self.encoder(batch.views[1])
        p1, p2 = self.predictor(z1), self.predictor(z2)
        primed = self.queue.filled == 0
        if primed:
            self.queue.enqueue(z1)
        loss = nnclr_loss(z1, z2, p1, p2, self.queue, self.cfg.temperature)
        if not primed:
            self.queue.enqueue(z1)
        return loss, {"queue_fill": float(self.queue.filled)}, h1
