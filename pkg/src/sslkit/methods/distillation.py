"""Methods where one branch regresses or distills a (stop-gradient) other branch."""

from __future__ import annotations

import torch
import torch.nn as nn

from ..losses import Center, FeatureQueue, byol_loss, center_update, dino_loss, ressl_loss, simsiam_loss
from ..models import MlpHead
from ..ndiff import l2_normalize
from .base import Method


class _WithPredictor(Method):
    def __init__(self, cfg):
        super().__init__(cfg)
        self.predictor = MlpHead([cfg.proj_out, cfg.pred_hidden, cfg.proj_out])


class BYOL(_WithPredictor):
    uses_target = True
    momentum_scheduled = True

    def compute_loss(self, batch):
        h1, z1 = self.encoder(batch.views[0])
        _, z2 = self.encoder(batch.views[1])
        p1, p2 = self.predictor(z1), self.predictor(z2)
        t1 = self.target_forward(batch.views[0])
        t2 = self.target_forward(batch.views[1])
        return byol_loss(p1, p2, t1, t2), {}, h1


class SimSiam(_WithPredictor):
    def compute_loss(self, batch):
        h1, z1 = self.encoder(batch.views[0])
        _, z2 = self.encoder(batch.views[1])
        p1, p2 = self.predictor(z1), self.predictor(z2)
        return simsiam_loss(p1, p2, z1, z2), {}, h1


class DinoHead(nn.Module):
    """MLP to a bottleneck, L2-normalized, then a linear map to ``K`` logits."""

    def __init__(self, in_dim: int, hidden: int, bottleneck: int, out_dim: int):
        super().__init__()
        self.mlp = MlpHead([in_dim, hidden, bottleneck])
        self.last = nn.Linear(bottleneck, out_dim, bias=False)

    def forward(self, x):
        return self.last(l2_normalize(self.mlp(x), axis=1))


class DINO(Method):
    uses_target = True
    momentum_scheduled = True

    def __init__(self, cfg):
        super().__init__(cfg)
        self.center = Center(cfg.num_prototypes, cfg.center_momentum)

    def make_head(self, in_dim):
        cfg = self.cfg
        return DinoHead(in_dim, cfg.proj_hidden, cfg.proj_out, cfg.num_prototypes)

    def compute_loss(self, batch):
        h1, s1 = self.encoder(batch.views[0])
        _, s2 = self.encoder(batch.views[1])
        t1 = self.target_forward(batch.views[0])
        t2 = self.target_forward(batch.views[1])
        loss = dino_loss([s1, s2], [t1, t2], self.center.value, self.cfg.temperature, self.cfg.teacher_temperature)
        center_update(self.center, torch.cat([t1, t2]))
        return loss, {}, h1


class ReSSL(Method):
    """Student sees the strong view, the EMA teacher the weak view."""

    uses_target = True

    def __init__(self, cfg):
        super().__init__(cfg)
        self.queue = FeatureQueue(cfg.queue_size, cfg.proj_out)

    def compute_loss(self, batch):
        h1, z_s = self.encoder(batch.views[0])
        z_t = self.target_forward(batch.views[1])
        primed = self.queue.filled == 0
        if primed:
            self.queue.enqueue(z_t)
        loss = ressl_loss(z_s, z_t, self.queue, self.cfg.temperature, self.cfg.teacher_temperature)
        if not primed:
            self.queue.enqueue(z_t)
        return loss, {"queue_fill": float(self.queue.filled)}, h1
