"""Declarative method configuration and its canonical ``key=value`` form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Any, Optional

from ..augment import AugmentPolicy, strong_pair, weak_policy

METHOD_NAMES = (
    "simclr",
    "mocov2plus",
    "byol",
    "simsiam",
    "barlow",
    "vicreg",
    "nnclr",
    "swav",
    "deepclusterv2",
    "dino",
    "ressl",
    "wmse",
    "supcon",
)


class ConfigError(ValueError):
    pass


@dataclass
class MethodConfig:
    name: str
    backbone: str = "small_cnn"
    backbone_widths: tuple[int, ...] = (32, 64, 128, 256)
    image_shape: tuple[int, ...] = (3, 32, 32)
    proj_hidden: int = 512
    proj_out: int = 128
    # method-specific; None means "not used by this method"
    pred_hidden: Optional[int] = None
    temperature: Optional[float] = None
    teacher_temperature: Optional[float] = None
    queue_size: Optional[int] = None
    momentum_base: Optional[float] = None
    num_prototypes: Optional[int] = None
    freeze_prototypes_epochs: Optional[int] = None
    sinkhorn_eps: Optional[float] = None
    sinkhorn_iters: Optional[int] = None
    center_momentum: Optional[float] = None
    barlow_lambda: Optional[float] = None
    vicreg_sim: Optional[float] = None
    vicreg_var: Optional[float] = None
    vicreg_cov: Optional[float] = None
    wmse_sub_batch: Optional[int] = None
    memory_size: Optional[int] = None
    kmeans_iters: Optional[int] = None
    policies: list[AugmentPolicy] = field(default_factory=strong_pair)

    @property
    def num_views(self) -> int:
        return len(self.policies)

    def validate(self) -> "MethodConfig":
        if self.name not in METHOD_NAMES:
            raise ConfigError(f"unknown method {self.name!r}; valid names: {', '.join(METHOD_NAMES)}")
        allowed = METHOD_FIELDS[self.name]
        for f in OPTIONAL_FIELDS:
            value = getattr(self, f)
            if value is not None and f not in allowed:
                raise ConfigError(f"{self.name}: option {f!r} is not used by this method")
            if value is None and f in allowed:
                raise ConfigError(f"{self.name}: option {f!r} is required")
        if self.backbone not in ("small_cnn", "mlp"):
            raise ConfigError(f"backbone must be small_cnn or mlp, got {self.backbone!r}")
        if self.num_views != 2:
            raise ConfigError(f"{self.name}: exactly 2 view policies are supported, got {self.num_views}")
        if self.name == "ressl" and [p.strength_tag for p in self.policies] != ["strong", "weak"]:
            raise ConfigError("ressl: policies must be (strong, weak)")
        _check_positive(self, ["proj_hidden", "proj_out", "pred_hidden", "temperature", "teacher_temperature",
                               "queue_size", "num_prototypes", "sinkhorn_eps", "wmse_sub_batch", "memory_size"])
        for name in ("momentum_base", "center_momentum"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.wmse_sub_batch is not None and self.wmse_sub_batch <= self.proj_out:
            raise ConfigError(
                f"wmse: wmse_sub_batch ({self.wmse_sub_batch}) must exceed proj_out ({self.proj_out})"
            )
        if self.num_prototypes is not None and self.memory_size is not None and self.memory_size < self.num_prototypes:
            raise ConfigError("deepclusterv2: memory_size must be >= num_prototypes")
        return self

    def to_flat(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "policies":
                for v, policy in enumerate(value):
                    for k, pv in policy.to_dict().items():
                        out[f"view{v}.{k}"] = _fmt(pv)
            elif value is not None:
                out[f.name] = _fmt(value)
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "MethodConfig":
        if "name" not in flat:
            raise ConfigError("method config is missing 'name'")
        kwargs: dict[str, Any] = {}
        views: dict[int, dict[str, Any]] = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in flat.items():
            if key.startswith("view"):
                head, _, attr = key.partition(".")
                try:
                    v = int(head[4:])
                except ValueError:
                    raise ConfigError(f"bad view key {key!r}") from None
                views.setdefault(v, {})[attr] = _parse_policy_value(attr, raw)
            elif key in types:
                kwargs[key] = _parse_value(types[key], raw, key)
            else:
                raise ConfigError(f"unknown method option {key!r}")
        if views:
            try:
                kwargs["policies"] = [AugmentPolicy(**views[v]) for v in sorted(views)]
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad view policy: {exc}") from None
        return cls(**kwargs)

    def canonical_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.to_flat().items()))


OPTIONAL_FIELDS = [f.name for f in fields(MethodConfig) if f.default is None]

_CONTRASTIVE_T = 0.2
METHOD_FIELDS: dict[str, dict[str, Any]] = {
    "simclr": {"temperature": _CONTRASTIVE_T},
    "supcon": {"temperature": 0.1},
    "mocov2plus": {"temperature": _CONTRASTIVE_T, "queue_size": 4096, "momentum_base": 0.99},
    "nnclr": {"temperature": _CONTRASTIVE_T, "queue_size": 4096, "pred_hidden": 256},
    "byol": {"pred_hidden": 256, "momentum_base": 0.99},
    "simsiam": {"pred_hidden": 256},
    "barlow": {"barlow_lambda": 5e-3},
    "vicreg": {"vicreg_sim": 25.0, "vicreg_var": 25.0, "vicreg_cov": 1.0},
    "wmse": {"wmse_sub_batch": 64},
    "swav": {
        "temperature": 0.1,
        "num_prototypes": 100,
        "sinkhorn_eps": 0.05,
        "sinkhorn_iters": 3,
        "freeze_prototypes_epochs": 1,
    },
    "deepclusterv2": {"temperature": 0.1, "num_prototypes": 100, "memory_size": 0, "kmeans_iters": 10},
    "dino": {
        "temperature": 0.1,
        "teacher_temperature": 0.04,
        "num_prototypes": 256,
        "momentum_base": 0.99,
        "center_momentum": 0.9,
    },
    "ressl": {"temperature": 0.1, "teacher_temperature": 0.04, "queue_size": 4096, "momentum_base": 0.999},
}


def default_config(name: str, **overrides: Any) -> MethodConfig:
    """Config for ``name`` with every method-specific default filled in."""
    if name not in METHOD_NAMES:
        raise ConfigError(f"unknown method {name!r}; valid names: {', '.join(METHOD_NAMES)}")
    kwargs: dict[str, Any] = dict(METHOD_FIELDS[name])
    if name == "ressl":
        kwargs["policies"] = [strong_pair()[0], weak_policy()]
    if name == "wmse":
        kwargs["proj_out"] = 32
    kwargs.update(overrides)
    return MethodConfig(name=name, **kwargs)


def _check_positive(cfg: MethodConfig, names: list[str]) -> None:
    for n in names:
        v = getattr(cfg, n)
        if v is not None and v <= 0:
            raise ConfigError(f"{n} must be positive, got {v}")


def _fmt(value: Any) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(annotation: str, raw: str, key: str) -> Any:
    try:
        if "tuple" in annotation:
            return tuple(int(v) for v in raw.split(",") if v)
        if "int" in annotation:
            return int(raw)
        if "float" in annotation:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"option {key!r}: cannot parse {raw!r} as {annotation}") from None


def _parse_policy_value(attr: str, raw: str) -> Any:
    if attr == "strength_tag":
        return raw
    try:
        if attr in ("crop_scale", "color_jitter"):
            return tuple(float(v) for v in raw.split(","))
        return float(raw)
    except ValueError:
        raise ConfigError(f"view option {attr!r}: cannot parse {raw!r}") from None


def replace(cfg: MethodConfig, **changes: Any) -> MethodConfig:
    return dataclasses.replace(cfg, **changes)
