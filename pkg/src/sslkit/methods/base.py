from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn as nn

from ..augment import ViewBatch
from ..models import Backbone, MlpHead, MomentumPair, ema_update, init_he_uniform, momentum_schedule
from .config import MethodConfig

Metrics = dict[str, float]


class NonFiniteLossError(FloatingPointError):
    def __init__(self, method: str, step: int, value: float):
        self.method = method
        self.step = step
        super().__init__(f"{method}: non-finite loss {value} at step {step}")


class Encoder(nn.Module):
    """Backbone followed by a head; ``forward`` returns ``(features, embedding)``."""

    def __init__(self, backbone: nn.Module, head: nn.Module):
        super().__init__()
        self.backbone = backbone
        self.head = head

    def forward(self, x):
        h = self.backbone(x)
        return h, self.head(h)


class Method(nn.Module):
    """Common training-step interface shared by all methods.

    Subclasses implement :meth:`compute_loss`; the trainer only ever calls
    :meth:`training_step`, :meth:`post_optimizer_hook` and :meth:`epoch_hook`.
    """

    uses_target = False
    uses_labels = False
    needs_memory = False
    momentum_scheduled = False

    def __init__(self, cfg: MethodConfig):
        super().__init__()
        self.cfg = cfg
        backbone = Backbone(cfg.backbone, cfg.backbone_widths, cfg.image_shape)
        self.encoder = Encoder(backbone, self.make_head(backbone.output_dim))
        self.register_buffer("global_step", torch.zeros((), dtype=torch.long))
        self.epoch = 0
        self.pair: Optional[MomentumPair] = None

    @property
    def name(self) -> str:
        return self.cfg.name

    @property
    def backbone(self) -> Backbone:
        return self.encoder.backbone

    def make_head(self, in_dim: int) -> nn.Module:
        return MlpHead([in_dim, self.cfg.proj_hidden, self.cfg.proj_out])

    def setup(self, generator: torch.Generator) -> None:
        """Initialize weights; momentum methods then clone the target."""
        init_he_uniform(self, generator)
        self.after_init(generator)
        if self.uses_target:
            self.pair = MomentumPair(self.encoder)
            self.target = self.pair.target

    def after_init(self, generator: torch.Generator) -> None:
        pass

    def load_state_dict(self, state_dict, strict: bool = True):
        result = super().load_state_dict(state_dict, strict)
        if self.uses_target:
            self.pair = MomentumPair(self.encoder, self.target)
        return result

    def trainable_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def compute_loss(self, batch: ViewBatch) -> tuple[torch.Tensor, Metrics, torch.Tensor]:
        raise NotImplementedError

    def training_step(self, batch: ViewBatch) -> tuple[torch.Tensor, Metrics, torch.Tensor]:
        if len(batch.views) != self.cfg.num_views:
            raise ValueError(f"{self.name}: expected {self.cfg.num_views} views, got {len(batch.views)}")
        if self.uses_labels and batch.labels is None:
            raise ValueError(f"{self.name}: batch has no labels")
        loss, metrics, feats = self.compute_loss(batch)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLossError(self.name, int(self.global_step), value)
        metrics = {"loss": value, **metrics}
        self.global_step += 1
        return loss, metrics, feats.detach()

    def momentum_at(self, step: int, total: int) -> float:
        base = self.cfg.momentum_base
        if self.momentum_scheduled:
            return momentum_schedule(min(step, total), total, base)
        return base

    def post_optimizer_hook(self, step: int, total: int) -> None:
        if self.pair is not None:
            ema_update(self.pair, self.momentum_at(step, total))

    def epoch_hook(self, memory: Optional[torch.Tensor] = None) -> None:
        pass

    @torch.no_grad()
    def target_forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.target(x)[1]
