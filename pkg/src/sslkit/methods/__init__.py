"""Method registry: turns a :class:`MethodConfig` into a trainable method."""

from __future__ import annotations

from ..ndiff import Rng
from .base import Encoder, Method, NonFiniteLossError
from .clustering import DeepClusterV2, SwAV
from .config import METHOD_FIELDS, METHOD_NAMES, ConfigError, MethodConfig, default_config
from .contrastive import NNCLR, MoCoV2Plus, SimCLR, SupCon
from .decorrelation import WMSE, BarlowTwins, VICReg
from .distillation import BYOL, DINO, ReSSL, SimSiam

REGISTRY: dict[str, type[Method]] = {
    "simclr": SimCLR,
    "mocov2plus": MoCoV2Plus,
    "byol": BYOL,
    "simsiam": SimSiam,
    "barlow": BarlowTwins,
    "vicreg": VICReg,
    "nnclr": NNCLR,
    "swav": SwAV,
    "deepclusterv2": DeepClusterV2,
    "dino": DINO,
    "ressl": ReSSL,
    "wmse": WMSE,
    "supcon": SupCon,
}
assert set(REGISTRY) == set(METHOD_NAMES)


def build(config: MethodConfig, rng: Rng) -> Method:
    config.validate()
    method = REGISTRY[config.name](config)
    method.setup(rng.torch_generator())
    return method


__all__ = [
    "ConfigError",
    "Encoder",
    "METHOD_FIELDS",
    "METHOD_NAMES",
    "Method",
    "MethodConfig",
    "NonFiniteLossError",
    "REGISTRY",
    "build",
    "default_config",
]
