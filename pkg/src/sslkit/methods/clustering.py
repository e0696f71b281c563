"""Prototype-based methods: online Sinkhorn codes and offline k-means."""

from __future__ import annotations

from typing import Optional

import torch

from ..losses import deepclusterv2_loss, kmeans_spherical, swav_loss
from ..models import Prototypes
from ..ndiff import Rng, l2_normalize
from .base import Method


class SwAV(Method):
    def __init__(self, cfg):
        super().__init__(cfg)
        self.prototypes = Prototypes(cfg.proj_out, cfg.num_prototypes)

    def after_init(self, generator):
        self.prototypes.reset(generator)

    def compute_loss(self, batch):
        h1, z1 = self.encoder(batch.views[0])
        _, z2 = self.encoder(batch.views[1])
        protos = self.prototypes.weight
        frozen = self.epoch < self.cfg.freeze_prototypes_epochs
        if frozen:
            protos = protos.detach()
        cfg = self.cfg
        loss = swav_loss(z1, z2, protos, cfg.temperature, cfg.sinkhorn_eps, cfg.sinkhorn_iters)
        return loss, {"prototypes_frozen": float(frozen)}, h1

    def post_optimizer_hook(self, step, total):
        self.prototypes.normalize()


class DeepClusterV2(Method):
    """Classifies each sample into the k-means cluster it fell in last epoch.

    ``memory`` keeps one normalized projection per dataset sample; it is
    refreshed on every training step and re-clustered by :meth:`epoch_hook`.
    """

    needs_memory = True

    def __init__(self, cfg):
        super().__init__(cfg)
        n = cfg.memory_size
        self.prototypes = Prototypes(cfg.proj_out, cfg.num_prototypes)
        self.register_buffer("memory", torch.zeros(n, cfg.proj_out))
        self.register_buffer("memory_filled", torch.zeros(n, dtype=torch.bool))
        self.register_buffer("assignments", torch.full((n,), -1, dtype=torch.long))
        self.register_buffer("kmeans_seed", torch.zeros((), dtype=torch.long))

    def after_init(self, generator):
        self.prototypes.reset(generator)
        self.kmeans_seed.fill_(int(torch.randint(0, 2**62, (), generator=generator)))

    def memory_complete(self) -> bool:
        return bool(self.memory_filled.all())

    @torch.no_grad()
    def observe(self, batch) -> None:
        """Write projections for ``batch`` into memory without training."""
        _, z = self.encoder(batch.views[0])
        self._remember(batch.indices, z)

    def _remember(self, indices, z):
        self.memory[indices] = l2_normalize(z.detach(), axis=1).to(self.memory.dtype)
        self.memory_filled[indices] = True

    def compute_loss(self, batch):
        h1, z1 = self.encoder(batch.views[0])
        _, z2 = self.encoder(batch.views[1])
        assigned = self.assignments[batch.indices]
        if (assigned < 0).any():
            missing = batch.indices[assigned < 0].tolist()
            raise KeyError(f"deepclusterv2: samples {missing[:10]} have no cluster assignment yet")
        protos = self.prototypes.weight
        t = self.cfg.temperature
        loss = 0.5 * (deepclusterv2_loss(z1, protos, assigned, t) + deepclusterv2_loss(z2, protos, assigned, t))
        self._remember(batch.indices, z1)
        return loss, {}, h1

    @torch.no_grad()
    def epoch_hook(self, memory: Optional[torch.Tensor] = None) -> None:
        if memory is None:
            if not self.memory_complete():
                missing = torch.nonzero(~self.memory_filled).flatten().tolist()
                raise ValueError(
                    f"deepclusterv2: feature memory incomplete, {len(missing)} ids missing: {missing[:20]}"
                )
            memory = self.memory
        rng = Rng([int(self.kmeans_seed), self.epoch])
        centroids, assign = kmeans_spherical(memory, self.cfg.num_prototypes, rng, self.cfg.kmeans_iters)
        self.prototypes.weight.copy_(centroids.to(self.prototypes.weight.dtype))
        self.assignments.copy_(assign)

    def post_optimizer_hook(self, step, total):
        self.prototypes.normalize()
