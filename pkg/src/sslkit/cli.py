"""Command line entry point.

Settings come from an optional flat ``key=value`` file (``#`` starts a
comment) and are overridden by flags. Method options are set with
``--set key=value``; they start from the method's defaults.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import torch

from . import data as data_mod
from . import plotting
from .checkpoint import load_checkpoint
from .eval import export_embeddings, knn_eval, linear_eval_offline, load_backbone, pca2d
from .methods import METHOD_NAMES, ConfigError, MethodConfig, default_config
from .trainer import (
    MetricsWriter,
    TrainConfig,
    create_session,
    extract_features,
    fit,
    resume,
)

log = logging.getLogger("sslkit")

SUBCOMMANDS = ("pretrain", "linear", "knn", "export", "benchmark-loader", "project2d")
DATASETS = ("synth_blobs", "cifar_bin")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


@dataclass
class RunConfig:
    subcommand: str = "pretrain"
    method: str = "simclr"
    dataset: str = "synth_blobs"
    data_path: str = ""
    epochs: int = 10
    batch_size: int = 256
    lr: float = 0.0  # 0 selects the method's default
    weight_decay: float = 1e-4
    warmup_epochs: float = 1.0
    workers: int = 2
    buffer: int = 4
    seed: int = 0
    out: str = "runs/default"
    checkpoint: str = ""
    resume: str = ""
    synth_classes: int = 10
    synth_per_class: int = 500
    synth_val_per_class: int = 100
    synth_noise: float = 0.1
    linear_epochs: int = 30
    knn_k: int = 20
    decode_latency: float = 0.002
    bench_epochs: int = 1
    overrides: dict[str, str] = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"subcommand: expected one of {', '.join(SUBCOMMANDS)}, got {self.subcommand!r}")
        if self.method not in METHOD_NAMES:
            raise ConfigError(f"method: unknown method {self.method!r}; valid names: {', '.join(METHOD_NAMES)}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset: expected one of {', '.join(DATASETS)}, got {self.dataset!r}")
        if self.dataset == "cifar_bin" and not self.data_path:
            raise ConfigError("data_path: required when dataset=cifar_bin")
        checks = {
            "epochs": self.epochs >= 0,
            "batch_size": self.batch_size >= 2,
            "lr": self.lr >= 0,
            "weight_decay": self.weight_decay >= 0,
            "warmup_epochs": self.warmup_epochs >= 0,
            "workers": self.workers >= 1,
            "buffer": self.buffer >= 1,
            "synth_classes": self.synth_classes >= 2,
            "synth_per_class": self.synth_per_class >= 1,
            "synth_val_per_class": self.synth_val_per_class >= 1,
            "synth_noise": self.synth_noise >= 0,
            "linear_epochs": self.linear_epochs >= 1,
            "knn_k": self.knn_k >= 1,
            "decode_latency": self.decode_latency >= 0,
            "bench_epochs": self.bench_epochs >= 1,
        }
        for key, ok in checks.items():
            if not ok:
                raise ConfigError(f"{key}: invalid value {getattr(self, key)!r}")
        if self.subcommand in ("linear", "knn", "export", "project2d") and not self.checkpoint:
            raise ConfigError(f"checkpoint: required for {self.subcommand}")
        self.method_config()  # surfaces bad --set values early
        return self

    def method_config(self, memory_size: int = 0) -> MethodConfig:
        base = default_config(self.method)
        flat = base.to_flat()
        for key, value in self.overrides.items():
            if key == "name":
                raise ConfigError("set.name: use --method instead")
            flat[key] = value
        if self.method == "deepclusterv2":
            flat.setdefault("memory_size", str(memory_size or self.synth_classes * self.synth_per_class))
            if memory_size:
                flat["memory_size"] = str(memory_size)
        try:
            return MethodConfig.from_flat(flat).validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr or DEFAULT_LR.get(self.method, 0.05),
            weight_decay=self.weight_decay,
            warmup_epochs=self.warmup_epochs,
            seed=self.seed,
        )

    def to_flat(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            if f.name == "overrides":
                continue
            v = getattr(self, f.name)
            out[f.name] = repr(v) if isinstance(v, float) else str(v)
        for k, v in self.overrides.items():
            out[f"set.{k}"] = v
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.to_flat().items()))

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs: dict = {}
        overrides: dict[str, str] = {}
        for key, raw in flat.items():
            if key.startswith("set."):
                overrides[key[4:]] = raw
                continue
            if key not in types or key == "overrides":
                raise ConfigError(f"{key}: unknown setting")
            kind = types[key]
            try:
                kwargs[key] = int(raw) if kind == "int" else float(raw) if kind == "float" else raw
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
        return cls(overrides=overrides, **kwargs)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.from_flat(parse_kv_text(text))


# per-method learning rates for plain SGD at desk scale
DEFAULT_LR: dict[str, float] = {"vicreg": 0.01}  # 0.05 diverges within the first epoch


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


_FLAG_KEYS = {
    "method": "method",
    "dataset": "dataset",
    "data_path": "data_path",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "lr",
    "weight_decay": "weight_decay",
    "workers": "workers",
    "buffer": "buffer",
    "seed": "seed",
    "out": "out",
    "checkpoint": "checkpoint",
    "resume": "resume",
    "decode_latency": "decode_latency",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sslkit", description="Self-supervised representation learning toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--method")
        p.add_argument("--dataset")
        p.add_argument("--data-path", dest="data_path")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--workers", type=int)
        p.add_argument("--buffer", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--checkpoint")
        p.add_argument("--resume")
        p.add_argument("--decode-latency", dest="decode_latency", type=float)
        p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                       help="method option or any config key (repeatable)")
    return parser


def parse(argv: Sequence[str], config_file: Optional[str] = None) -> RunConfig:
    """Merge file settings and flags into a validated :class:`RunConfig`."""
    args = build_parser().parse_args(list(argv))
    flat: dict[str, str] = {}
    path = config_file or args.config
    if path:
        try:
            flat.update(parse_kv_text(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from None
    flat["subcommand"] = args.subcommand
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr)
        if value is not None:
            flat[key] = str(value)
    known = {f.name for f in fields(RunConfig)}
    for item in args.sets:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        flat[key if key in known else f"set.{key}"] = value
    cfg = RunConfig.from_flat(flat)
    return cfg.validate()


def load_datasets(cfg: RunConfig) -> tuple[data_mod.Dataset, Optional[data_mod.Dataset]]:
    if cfg.dataset == "synth_blobs":
        kw = dict(classes=cfg.synth_classes, noise=cfg.synth_noise, seed=cfg.seed)
        return (
            data_mod.synth_blobs(per_class=cfg.synth_per_class, split=0, **kw),
            data_mod.synth_blobs(per_class=cfg.synth_val_per_class, split=1, **kw),
        )
    root = Path(cfg.data_path)
    if root.is_dir():
        train_files = sorted(root.glob("data_batch_*.bin"))
        test_files = sorted(root.glob("test_batch*.bin"))
        if not train_files:
            raise FileNotFoundError(f"{root}: no data_batch_*.bin files")
        return data_mod.read_cifar_bin(train_files), (data_mod.read_cifar_bin(test_files) if test_files else None)
    return data_mod.read_cifar_bin([root]), None


def _write_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")


def _pretrain(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    train, val = load_datasets(cfg)
    _write_config(cfg, out)
    if cfg.resume:
        session = resume(cfg.resume)
        method_cfg = session.method_cfg
        if cfg.epochs != session.train_cfg.epochs:
            # the schedule is re-spanned, so this is no longer the original run
            log.warning("resume: epochs %d -> %d; the lr schedule now spans the new total",
                        session.train_cfg.epochs, cfg.epochs)
            session.train_cfg = dataclasses.replace(session.train_cfg, epochs=cfg.epochs)
    else:
        method_cfg = cfg.method_config(memory_size=len(train))
        session = create_session(method_cfg, cfg.train_config(), train.num_classes)
    loader = data_mod.ViewLoader(
        train,
        data_mod.LoaderConfig(batch_size=cfg.batch_size, workers=cfg.workers, buffer=cfg.buffer,
                              seed=session.train_cfg.seed),
        method_cfg.policies,
    )
    if len(loader) == 0:
        raise ConfigError(f"batch_size: {cfg.batch_size} exceeds dataset size {len(train)}")
    final = fit(session, loader, val=val, sinks=[MetricsWriter(out / "metrics.csv")], checkpoint_dir=out)
    if session.history:
        plotting.plot_training_curves(session.history, out / "curves.png", title=method_cfg.name)
    if final is not None:
        print(f"{method_cfg.name} epoch={final.epoch} loss={final.loss:.4f} top1={final.top1:.2f} top5={final.top5:.2f}")
    return EXIT_OK


def _linear(cfg: RunConfig) -> int:
    train, val = load_datasets(cfg)
    test = val if val is not None else train
    top1, top5 = linear_eval_offline(cfg.checkpoint, train, test, epochs=cfg.linear_epochs, seed=cfg.seed)
    print(f"linear top1={top1:.2f} top5={top5:.2f}")
    return EXIT_OK


def _knn(cfg: RunConfig) -> int:
    train, val = load_datasets(cfg)
    top1 = knn_eval(cfg.checkpoint, train, val if val is not None else train, k=cfg.knn_k)
    print(f"knn k={cfg.knn_k} top1={top1:.2f}")
    return EXIT_OK


def _export(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    train, _ = load_datasets(cfg)
    n = export_embeddings(cfg.checkpoint, train, out / "embeddings.csv")
    print(f"exported {n} embeddings to {out / 'embeddings.csv'}")
    return EXIT_OK


def _project2d(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _, val = load_datasets(cfg)
    ds = val if val is not None else load_datasets(cfg)[0]
    feats = extract_features(load_backbone(cfg.checkpoint), ds.images)
    points, _, variances = pca2d(feats)
    with (out / "projection.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "pc1", "pc2"])
        for i, (p, y) in enumerate(zip(points, ds.labels.tolist())):
            w.writerow([i, y, repr(float(p[0])), repr(float(p[1]))])
    plotting.plot_projection(points, ds.labels.numpy(), out / "projection.png")
    print(f"projected {len(ds)} points; explained variance {variances[0]:.4g}, {variances[1]:.4g}")
    return EXIT_OK


def _benchmark(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    train, _ = load_datasets(cfg)
    policies = cfg.method_config(memory_size=len(train)).policies
    common = dict(batch_size=cfg.batch_size, seed=cfg.seed, decode_latency=cfg.decode_latency)
    naive = data_mod.LoaderConfig(workers=1, buffer=1, pipelined=False, **common)
    piped = [
        data_mod.LoaderConfig(workers=1, buffer=1, **common),
        data_mod.LoaderConfig(workers=cfg.workers, buffer=cfg.buffer, **common),
    ]
    rows = data_mod.benchmark_loader(train, naive, piped, policies, epochs=cfg.bench_epochs)
    header = ["config", "workers", "buffer", "epoch_seconds", "imgs_per_sec", "speedup_pct", "buffer_mb"]
    with (out / "benchmark.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        print(",".join(header))
        for r in rows:
            row = [r.label, r.workers, r.buffer, f"{r.epoch_seconds:.4f}", f"{r.imgs_per_sec:.1f}",
                   f"{r.speedup_pct:.1f}", f"{r.buffer_bytes / 2**20:.2f}"]
            w.writerow(row)
            print(",".join(str(v) for v in row))
    plotting.plot_benchmark(rows, out / "benchmark.png")
    return EXIT_OK


_HANDLERS = {
    "pretrain": _pretrain,
    "linear": _linear,
    "knn": _knn,
    "export": _export,
    "project2d": _project2d,
    "benchmark-loader": _benchmark,
}


def dispatch(cfg: RunConfig) -> int:
    try:
        return _HANDLERS[cfg.subcommand](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as an exit code
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = parse(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
