"""Backbones, projection/prediction heads, prototypes and momentum targets."""

from __future__ import annotations

import copy
import math
from typing import Iterator, Sequence

import torch
import torch.nn as nn

from .ndiff import ShapeError, l2_normalize

# per-channel standardization applied at the network input
_MEAN = 0.5
_STD = 0.25


def init_he_uniform(module: nn.Module, generator: torch.Generator) -> None:
    """Seeded He-uniform weights, zero biases, unit/zero batchnorm affine."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, a=0.0, nonlinearity="relu", generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
            if m.affine:
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)


class ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 2):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(cout)
        self.act = nn.ReLU()

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


class Backbone(nn.Module):
    """Image encoder producing ``B x output_dim`` features.

    ``kind="small_cnn"``: stride-2 conv blocks followed by global average
    pooling. ``kind="mlp"``: flatten and a ReLU MLP over ``widths``.
    """

    def __init__(
        self,
        kind: str = "small_cnn",
        widths: Sequence[int] = (32, 64, 128, 256),
        in_shape: Sequence[int] = (3, 32, 32),
    ):
        super().__init__()
        self.kind = kind
        self.in_shape = tuple(in_shape)
        if kind == "small_cnn":
            chans = [in_shape[0], *widths]
            self.blocks = nn.Sequential(*[ConvBlock(a, b) for a, b in zip(chans[:-1], chans[1:])])
        elif kind == "mlp":
            dims = [math.prod(in_shape), *widths]
            layers: list[nn.Module] = []
            for a, b in zip(dims[:-1], dims[1:]):
                layers += [nn.Linear(a, b), nn.ReLU()]
            self.blocks = nn.Sequential(*layers)
        else:
            raise ValueError(f"unknown backbone kind {kind!r}; expected 'small_cnn' or 'mlp'")
        self.output_dim = widths[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or tuple(x.shape[1:]) != self.in_shape:
            raise ShapeError("backbone", {"x": tuple(x.shape), "expected": (-1, *self.in_shape)})
        x = (x - _MEAN) / _STD
        if self.kind == "small_cnn":
            return self.blocks(x).mean(dim=(2, 3))
        return self.blocks(x.flatten(1))

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


class MlpHead(nn.Module):
    """Linear layers over ``dims``; hidden layers get optional batchnorm + ReLU.

    The last layer has no activation.
    """

    def __init__(self, dims: Sequence[int], batchnorm: bool = True, relu: bool = True):
        super().__init__()
        if len(dims) < 2:
            raise ValueError(f"MlpHead needs at least [in, out], got {list(dims)}")
        self.dims = list(dims)
        layers: list[nn.Module] = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            layers.append(nn.Linear(a, b, bias=last or not batchnorm))
            if not last:
                if batchnorm:
                    layers.append(nn.BatchNorm1d(b))
                if relu:
                    layers.append(nn.ReLU())
        self.layers = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 2 or x.shape[1] != self.dims[0]:
            raise ShapeError("mlp_head", {"x": tuple(x.shape), "expected": (-1, self.dims[0])})
        return self.layers(x)


def forward_backbone(backbone: Backbone, x: torch.Tensor) -> torch.Tensor:
    return backbone(x)


def forward_head(head: MlpHead, x: torch.Tensor) -> torch.Tensor:
    return head(x)


class Prototypes(nn.Module):
    """``K x d`` matrix of unit-norm prototype vectors."""

    def __init__(self, dim: int, num_prototypes: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(num_prototypes, dim))

    def reset(self, generator: torch.Generator) -> None:
        with torch.no_grad():
            self.weight.normal_(generator=generator)
            self.normalize()

    @torch.no_grad()
    def normalize(self) -> None:
        self.weight.copy_(l2_normalize(self.weight, axis=1))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return z @ self.weight.T


class MomentumPair:
    """Online module and its EMA target copy; the target never takes gradients."""

    def __init__(self, online: nn.Module, target: nn.Module | None = None):
        self.online = online
        if target is None:
            target = copy.deepcopy(online)
        self.target = target
        for p in self.target.parameters():
            p.requires_grad_(False)
        self.momentum = 1.0

    def pairs(self) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        for (n1, p), (n2, t) in zip(self.online.named_parameters(), self.target.named_parameters()):
            if n1 != n2 or p.shape != t.shape:
                raise ShapeError("momentum_pair", {n1: tuple(p.shape), n2: tuple(t.shape)})
            yield p, t


@torch.no_grad()
def ema_update(pair: MomentumPair, m: float) -> None:
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {m}")
    pair.momentum = m
    for online, target in pair.pairs():
        if m == 1.0:
            continue
        if m == 0.0:
            target.copy_(online)
        else:
            target.copy_(m * target + (1.0 - m) * online)


def momentum_schedule(step: int, total: int, base: float) -> float:
    """Cosine increase of the EMA momentum from ``base`` at step 0 to 1 at ``total``."""
    if total <= 0:
        raise ValueError("momentum_schedule: total steps must be positive")
    if not 0 <= step <= total:
        raise ValueError(f"momentum_schedule: step {step} outside [0, {total}]")
    return 1.0 - (1.0 - base) * (math.cos(math.pi * step / total) + 1.0) / 2.0
