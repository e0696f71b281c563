"""Training loop: SGD, cosine schedule, online linear probe, checkpoints, metrics."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from .data import Dataset, ViewLoader
from .methods import Method, MethodConfig, build
from .ndiff import NonFiniteError, Rng, backward

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "loss", "top1", "top5", "seconds")


@dataclass
class OptimizerState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    buffers: dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def sgd_step(params: Iterable[tuple[str, torch.Tensor]], opt: OptimizerState) -> None:
    """``v <- momentum * v + g + wd * theta``; ``theta <- theta - lr * v``.

    Parameters without a gradient are left untouched.
    """
    for name, p in params:
        g = p.grad
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"sgd_step: gradient shape {tuple(g.shape)} != parameter {name} {tuple(p.shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"gradient of {name}")
        v = opt.buffers.get(name)
        if v is None:
            v = torch.zeros_like(p)
            opt.buffers[name] = v
        v.mul_(opt.momentum).add_(g)
        if opt.weight_decay:
            v.add_(p, alpha=opt.weight_decay)
        p.sub_(v, alpha=opt.lr)


def cosine_lr(step: int, total: int, base_lr: float, warmup: int = 0) -> float:
    if not 0 <= warmup < total:
        raise ValueError(f"cosine_lr: need 0 <= warmup < total, got warmup={warmup}, total={total}")
    step = min(max(step, 0), total)
    if step < warmup:
        return base_lr * step / warmup
    return base_lr * (math.cos(math.pi * (step - warmup) / (total - warmup)) + 1) / 2


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.05
    weight_decay: float = 1e-4
    momentum: float = 0.9
    warmup_epochs: float = 1.0
    probe_lr: float = 0.1
    checkpoint_every: int = 1
    keep_last: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0 or self.weight_decay < 0 or self.warmup_epochs < 0:
            raise ValueError("epochs >= 0, lr > 0, weight_decay >= 0 and warmup_epochs >= 0 are required")
        if self.checkpoint_every < 1 or self.keep_last < 1:
            raise ValueError("checkpoint_every and keep_last must be >= 1")

    def to_flat(self) -> dict[str, str]:
        return {f.name: repr(v) if isinstance(v, float) else str(v) for f in fields(self) for v in [getattr(self, f.name)]}

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in flat.items():
            if k not in types:
                raise ValueError(f"unknown train option {k!r}")
            kwargs[k] = float(v) if types[k] == "float" else int(v)
        return cls(**kwargs)


@dataclass
class ProbeMetrics:
    epoch: int
    top1: float
    top5: float
    loss: float
    seconds: float

    def __post_init__(self):
        if not (0 <= self.top1 <= self.top5 <= 100):
            raise ValueError(f"inconsistent accuracies top1={self.top1}, top5={self.top5}")

    def row(self) -> tuple:
        return (self.epoch, self.loss, self.top1, self.top5, self.seconds)


class TrainingAborted(RuntimeError):
    def __init__(self, reason: BaseException, last_checkpoint: Optional[Path]):
        self.last_checkpoint = last_checkpoint
        super().__init__(f"training aborted: {reason}; last good checkpoint: {last_checkpoint}")


@dataclass
class Session:
    """Everything needed to continue training bit-exactly."""

    method: Method
    method_cfg: MethodConfig
    train_cfg: TrainConfig
    probe: Optional[nn.Linear]
    opt: OptimizerState
    probe_opt: OptimizerState
    epoch: int = 0
    global_step: int = 0
    loss_trace: list[float] = field(default_factory=list)
    history: list[ProbeMetrics] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def create_session(method_cfg: MethodConfig, train_cfg: TrainConfig, num_classes: int = 0) -> Session:
    method = build(method_cfg, Rng(train_cfg.seed))
    probe = None
    if num_classes:
        probe = nn.Linear(method.backbone.output_dim, num_classes)
        g = Rng([train_cfg.seed, 2]).torch_generator()
        bound = 1 / math.sqrt(probe.in_features)
        with torch.no_grad():
            probe.weight.uniform_(-bound, bound, generator=g)
            probe.bias.zero_()
    return Session(
        method=method,
        method_cfg=method_cfg,
        train_cfg=train_cfg,
        probe=probe,
        opt=OptimizerState(train_cfg.lr, train_cfg.momentum, train_cfg.weight_decay),
        probe_opt=OptimizerState(train_cfg.probe_lr, 0.9, 0.0),
    )


def topk_accuracy(logits: torch.Tensor, labels: torch.Tensor, ks: Sequence[int] = (1, 5)) -> list[float]:
    """Percent of rows whose label is among the top-k logits (k capped at #classes)."""
    n = labels.shape[0]
    if n == 0:
        return [0.0 for _ in ks]
    order = logits.argsort(dim=1, descending=True, stable=True)
    hits = order == labels[:, None]
    return [100.0 * float(hits[:, : min(k, logits.shape[1])].any(dim=1).sum()) / n for k in ks]


@torch.no_grad()
def extract_features(backbone: nn.Module, images: torch.Tensor, batch_size: int = 512) -> torch.Tensor:
    was_training = backbone.training
    backbone.eval()
    try:
        out = [backbone(images[i : i + batch_size]) for i in range(0, images.shape[0], batch_size)]
    finally:
        backbone.train(was_training)
    return torch.cat(out) if out else torch.zeros(0, getattr(backbone, "output_dim", 0))


class MetricsWriter:
    """Append-only CSV sink; writes the header only when creating the file."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)

    def __call__(self, m: ProbeMetrics) -> None:
        export_metrics([m], self.path)


def export_metrics(rows: Sequence[ProbeMetrics], path: str | os.PathLike) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRICS_HEADER)
        for m in rows:
            w.writerow([m.epoch, repr(m.loss), repr(m.top1), repr(m.top5), repr(m.seconds)])
        fh.flush()


def read_metrics(path: str | os.PathLike) -> list[ProbeMetrics]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected metrics header {header}")
        return [
            ProbeMetrics(int(e), float(t1), float(t5), float(loss), float(s))
            for e, loss, t1, t5, s in reader
        ]


def _zero_grads(module: nn.Module) -> None:
    for p in module.parameters():
        p.grad = None


def _fill_memory(method: Method, loader: ViewLoader, epoch: int) -> None:
    log.info("%s: filling feature memory", method.name)
    for batch in loader.iter_all(epoch):
        method.observe(batch)


def evaluate_probe(session: Session, val: Dataset) -> tuple[float, float]:
    feats = extract_features(session.method.backbone, val.images)
    with torch.no_grad():
        logits = session.probe(feats)
    top1, top5 = topk_accuracy(logits, val.labels)
    return top1, top5


def fit(
    session: Session,
    loader: ViewLoader,
    epochs: Optional[int] = None,
    val: Optional[Dataset] = None,
    sinks: Sequence[Callable[[ProbeMetrics], None]] = (),
    checkpoint_dir: Optional[str | os.PathLike] = None,
) -> Optional[ProbeMetrics]:
    """Train ``session`` from its current epoch up to ``epochs``.

    Per step: method loss, backward, SGD with the cosine schedule, then the
    method's post-step hook; the probe is trained on detached backbone
    features with its own optimizer. Per epoch: the method's epoch hook runs
    first, a metrics row is emitted at the end and a checkpoint written every
    ``checkpoint_every`` epochs. Probe accuracy is measured on ``val`` when
    given, otherwise on the training views seen during the epoch.
    """
    cfg = session.train_cfg
    epochs = cfg.epochs if epochs is None else epochs
    method, probe = session.method, session.probe
    steps = len(loader)
    total = max(1, cfg.epochs * steps)
    warmup = min(int(round(cfg.warmup_epochs * steps)), total // 2)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    last: Optional[ProbeMetrics] = None

    for epoch in range(session.epoch, epochs):
        start = time.perf_counter()
        method.train()
        method.epoch = epoch
        try:
            if method.needs_memory:
                if not method.memory_complete():
                    _fill_memory(method, loader, epoch)
                method.epoch_hook()
            losses, hits1, hits5, seen = [], 0.0, 0.0, 0
            for batch in loader.iter_epoch(epoch):
                session.opt.lr = cosine_lr(session.global_step, total, cfg.lr, warmup)
                loss, metrics, feats = method.training_step(batch)
                _zero_grads(method)
                backward(loss)
                sgd_step(method.trainable_parameters(), session.opt)
                method.post_optimizer_hook(session.global_step + 1, total)
                if probe is not None:
                    logits = probe(feats)
                    probe_loss = F.cross_entropy(logits, batch.labels)
                    _zero_grads(probe)
                    backward(probe_loss)
                    sgd_step(probe.named_parameters(), session.probe_opt)
                    t1, t5 = topk_accuracy(logits.detach(), batch.labels)
                    n = batch.batch_size
                    hits1, hits5, seen = hits1 + t1 * n, hits5 + t5 * n, seen + n
                session.global_step += 1
                session.loss_trace.append(metrics["loss"])
                losses.append(metrics["loss"])
        except (FloatingPointError, NonFiniteError) as exc:
            last_ckpt = session.checkpoints[-1] if session.checkpoints else None
            raise TrainingAborted(exc, last_ckpt) from exc

        if probe is not None and val is not None:
            top1, top5 = evaluate_probe(session, val)
        elif seen:
            top1, top5 = hits1 / seen, hits5 / seen
        else:
            top1 = top5 = 0.0
        last = ProbeMetrics(epoch + 1, top1, top5, float(np.mean(losses)) if losses else 0.0,
                            time.perf_counter() - start)
        session.history.append(last)
        session.epoch = epoch + 1
        log.info("%s epoch %d: loss %.4f top1 %.2f top5 %.2f (%.1fs)", method.name, last.epoch, last.loss,
                 last.top1, last.top5, last.seconds)
        for sink in sinks:
            sink(last)
        if ckpt_dir is not None and session.epoch % cfg.checkpoint_every == 0:
            path = ckpt_dir / f"ckpt-epoch{session.epoch:04d}.slck"
            save_checkpoint(session_to_checkpoint(session), path)
            session.checkpoints.append(path)
            while len(session.checkpoints) > cfg.keep_last:
                old = session.checkpoints.pop(0)
                old.unlink(missing_ok=True)
    return last


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().copy()


def config_text(method_cfg: MethodConfig, train_cfg: TrainConfig, num_classes: int = 0) -> str:
    flat = {f"method.{k}": v for k, v in method_cfg.to_flat().items()}
    flat.update({f"train.{k}": v for k, v in train_cfg.to_flat().items()})
    flat["probe.num_classes"] = str(num_classes)
    return "".join(f"{k}={v}\n" for k, v in sorted(flat.items()))


def parse_config_text(text: str) -> tuple[MethodConfig, TrainConfig, int]:
    method, train, classes = {}, {}, 0
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        group, _, name = key.partition(".")
        if group == "method":
            method[name] = value
        elif group == "train":
            train[name] = value
        elif key == "probe.num_classes":
            classes = int(value)
        else:
            raise ValueError(f"unknown checkpoint config key {key!r}")
    return MethodConfig.from_flat(method), TrainConfig.from_flat(train), classes


def session_to_checkpoint(session: Session) -> CheckpointState:
    classes = session.probe.out_features if session.probe is not None else 0
    blobs: dict[str, np.ndarray] = {}
    for k, v in session.method.state_dict().items():
        blobs[f"method.{k}"] = _to_numpy(v)
    if session.probe is not None:
        for k, v in session.probe.state_dict().items():
            blobs[f"probe.{k}"] = _to_numpy(v)
    for k, v in session.opt.buffers.items():
        blobs[f"opt.{k}"] = _to_numpy(v)
    for k, v in session.probe_opt.buffers.items():
        blobs[f"probe_opt.{k}"] = _to_numpy(v)
    blobs["meta.epoch"] = np.array([session.epoch], dtype=np.int64)
    blobs["meta.global_step"] = np.array([session.global_step], dtype=np.int64)
    blobs["meta.seed"] = np.array([session.train_cfg.seed], dtype=np.int64)
    blobs["meta.loss_trace"] = np.array(session.loss_trace, dtype=np.float64)
    blobs["meta.history"] = np.array([m.row() for m in session.history], dtype=np.float64).reshape(-1, 5)
    return CheckpointState(config_text(session.method_cfg, session.train_cfg, classes), blobs)


def session_from_checkpoint(ckpt: CheckpointState) -> Session:
    method_cfg, train_cfg, classes = parse_config_text(ckpt.config_text)
    session = create_session(method_cfg, train_cfg, classes)
    groups: dict[str, dict[str, torch.Tensor]] = {}
    for name, arr in ckpt.blobs.items():
        group, _, key = name.partition(".")
        groups.setdefault(group, {})[key] = torch.from_numpy(arr.copy())
    expected = session.method.state_dict()
    got = groups.get("method", {})
    for k, v in expected.items():
        if k not in got:
            raise ValueError(f"checkpoint is missing method tensor {k!r}")
        if tuple(got[k].shape) != tuple(v.shape):
            raise ValueError(f"checkpoint tensor {k!r} has shape {tuple(got[k].shape)}, expected {tuple(v.shape)}")
    session.method.load_state_dict(got)
    if session.probe is not None:
        session.probe.load_state_dict(groups["probe"])
    session.opt.buffers = dict(groups.get("opt", {}))
    session.probe_opt.buffers = dict(groups.get("probe_opt", {}))
    meta = groups["meta"]
    session.epoch = int(meta["epoch"][0])
    session.global_step = int(meta["global_step"][0])
    session.loss_trace = meta["loss_trace"].tolist()
    session.history = [
        ProbeMetrics(int(r[0]), float(r[2]), float(r[3]), float(r[1]), float(r[4])) for r in meta["history"].tolist()
    ]
    return session


def resume(path: str | os.PathLike) -> Session:
    return session_from_checkpoint(load_checkpoint(path))
