"""Datasets and the pipelined view loader.

The loader splits each epoch's seeded permutation into batches. ``P`` worker
threads decode and augment batches into a reorder window of depth ``Q``, and
the consumer receives them strictly in batch order. Every batch draws its
augmentation randomness from ``(seed, epoch, batch number)``, so the output
does not depend on worker count or scheduling.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentPolicy, ViewBatch, generate_views
from .ndiff import Rng

CIFAR_RECORD = 1 + 3 * 32 * 32


class DataFormatError(ValueError):
    pass


class LoaderError(RuntimeError):
    pass


@dataclass
class Dataset:
    images: torch.Tensor  # N x C x H x W, float32 in [0, 1]
    labels: torch.Tensor  # N, int64
    kind: str = "synth_blobs"
    num_classes: int = 0

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree on N")
        if not self.num_classes:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def __getitem__(self, idx):
        return self.images[idx], self.labels[idx]

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.kind, self.num_classes)


def read_cifar_bin(paths: Sequence[str | os.PathLike]) -> Dataset:
    """Concatenate CIFAR-10 binary batch files (label byte + 3072 pixel bytes)."""
    chunks = []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) % CIFAR_RECORD:
            whole = len(raw) // CIFAR_RECORD
            raise DataFormatError(
                f"{path}: size {len(raw)} bytes is not a multiple of {CIFAR_RECORD}; "
                f"expected {whole * CIFAR_RECORD} or {(whole + 1) * CIFAR_RECORD} bytes"
            )
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks) if chunks else np.zeros((0, CIFAR_RECORD), np.uint8)
    labels = torch.from_numpy(records[:, 0].astype(np.int64))
    images = torch.from_numpy(records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0)
    return Dataset(images, labels, kind="cifar_bin", num_classes=10)


def write_cifar_bin(ds: Dataset, path: str | os.PathLike) -> None:
    """Dump ``ds`` in the CIFAR binary layout (pixels quantized to bytes)."""
    if ds.image_shape != (3, 32, 32):
        raise ValueError(f"CIFAR layout needs 3x32x32 images, dataset has {ds.image_shape}")
    if len(ds) and (ds.labels.min() < 0 or ds.labels.max() > 255):
        raise ValueError("labels must fit in one byte")
    pixels = np.round(ds.images.numpy() * 255).astype(np.uint8).reshape(len(ds), -1)
    records = np.concatenate([ds.labels.numpy().astype(np.uint8)[:, None], pixels], axis=1)
    Path(path).write_bytes(records.tobytes())


def synth_blobs(
    classes: int = 10,
    per_class: int = 500,
    shape: Sequence[int] = (3, 32, 32),
    noise: float = 0.1,
    seed: int = 0,
    split: int = 0,
    margin: float = 0.1,
) -> Dataset:
    """Class templates plus Gaussian pixel noise.

    Templates are smooth random colour fields (a 4x4 grid upsampled
    bilinearly) drawn from ``seed``, rejected until every pair is at least
    ``margin`` apart in RMS pixel distance. ``split`` changes only the noise,
    so splits of one seed share templates.
    """
    if classes < 2:
        raise ValueError("synth_blobs needs at least 2 classes")
    c, h, w = shape
    rng = np.random.default_rng([seed, 0])
    templates: list[torch.Tensor] = []
    while len(templates) < classes:
        coarse = torch.from_numpy(rng.uniform(0, 1, size=(1, c, 4, 4)).astype(np.float32))
        t = F.interpolate(coarse, size=(h, w), mode="bilinear", align_corners=False)[0]
        if all(torch.sqrt(((t - o) ** 2).mean()) >= margin for o in templates):
            templates.append(t)
    noise_rng = np.random.default_rng([seed, 1, split])
    labels = np.repeat(np.arange(classes), per_class)
    order = noise_rng.permutation(len(labels))
    labels = labels[order]
    base = torch.stack(templates)[torch.from_numpy(labels)]
    eps = torch.from_numpy(noise_rng.normal(0, 1, size=base.shape).astype(np.float32))
    images = (base + noise * eps).clamp(0, 1)
    return Dataset(images, torch.from_numpy(labels.astype(np.int64)), "synth_blobs", classes)


@dataclass
class LoaderConfig:
    batch_size: int = 256
    workers: int = 4
    buffer: int = 8
    seed: int = 0
    drop_last: bool = True
    shuffle: bool = True
    pipelined: bool = True
    decode_latency: float = 0.0  # simulated seconds per image

    def __post_init__(self):
        if self.batch_size < 1 or self.workers < 1 or self.buffer < 1:
            raise ValueError("batch_size, workers and buffer must all be >= 1")
        if self.decode_latency < 0:
            raise ValueError("decode_latency must be >= 0")


class ViewLoader:
    """Iterable over :class:`ViewBatch` for one dataset and policy list."""

    def __init__(self, ds: Dataset, cfg: LoaderConfig, policies: Sequence[AugmentPolicy]):
        self.ds = ds
        self.cfg = cfg
        self.policies = list(policies)
        self.epoch = 0
        self.peak_resident = 0

    def __len__(self) -> int:
        n, b = len(self.ds), self.cfg.batch_size
        return n // b if self.cfg.drop_last else -(-n // b)

    def batch_indices(self, epoch: int, stream: int = 0) -> list[np.ndarray]:
        n = len(self.ds)
        if self.cfg.shuffle:
            order = np.random.default_rng([self.cfg.seed, stream, epoch]).permutation(n)
        else:
            order = np.arange(n)
        b = self.cfg.batch_size
        return [order[i : i + b] for i in range(0, len(self) * b, b)]

    def make_batch(self, epoch: int, seq: int, idx: np.ndarray, stream: int = 0) -> ViewBatch:
        if self.cfg.decode_latency:
            time.sleep(self.cfg.decode_latency * len(idx))
        index = torch.from_numpy(idx.astype(np.int64))
        images = self.ds.images[index]
        rng = Rng([self.cfg.seed, stream, epoch, seq, 1])
        return generate_views(images, self.policies, rng, indices=index, labels=self.ds.labels[index])

    def iter_all(self, epoch: int = 0, stream: int = 1) -> Iterator[ViewBatch]:
        """Every sample exactly once, in index order, ignoring ``drop_last``."""
        n, b = len(self.ds), self.cfg.batch_size
        for seq, start in enumerate(range(0, n, b)):
            yield self.make_batch(epoch, seq, np.arange(start, min(n, start + b)), stream)

    def __iter__(self) -> Iterator[ViewBatch]:
        it = self.iter_epoch(self.epoch)
        self.epoch += 1
        return it

    def iter_epoch(self, epoch: int, stream: int = 0) -> Iterator[ViewBatch]:
        batches = self.batch_indices(epoch, stream)
        if not self.cfg.pipelined:
            for seq, idx in enumerate(batches):
                yield self.make_batch(epoch, seq, idx, stream)
            return
        yield from _Pipeline(self, epoch, stream, batches).run()


class _Pipeline:
    def __init__(self, loader: ViewLoader, epoch: int, stream: int, batches: list[np.ndarray]):
        self.loader = loader
        self.epoch = epoch
        self.stream = stream
        self.batches = batches
        self.window = loader.cfg.buffer
        self.cond = threading.Condition()
        self.next_task = 0
        self.consumed = 0  # batches handed to the consumer
        self.ready: dict[int, ViewBatch] = {}
        self.in_flight = 0
        self.error: Optional[BaseException] = None
        self.error_seq = 0  # earliest failed batch; earlier ones are still delivered
        self.stop = False

    def _worker(self) -> None:
        while True:
            with self.cond:
                while not self.stop and self.next_task < len(self.batches) and self.next_task >= self.consumed + self.window:
                    self.cond.wait()
                if self.stop or self.next_task >= len(self.batches):
                    return
                seq = self.next_task
                self.next_task += 1
                self.in_flight += 1
            try:
                batch = self.loader.make_batch(self.epoch, seq, self.batches[seq], self.stream)
            except BaseException as exc:  # noqa: BLE001 - forwarded to the consumer
                with self.cond:
                    if self.error is None or seq < self.error_seq:
                        self.error, self.error_seq = exc, seq
                    self.stop = True
                    self.in_flight -= 1
                    self.cond.notify_all()
                return
            with self.cond:
                self.ready[seq] = batch
                self.in_flight -= 1
                resident = len(self.ready) + self.in_flight
                self.loader.peak_resident = max(self.loader.peak_resident, resident)
                self.cond.notify_all()

    def run(self) -> Iterator[ViewBatch]:
        threads = [
            threading.Thread(target=self._worker, name=f"loader-{i}", daemon=True)
            for i in range(self.loader.cfg.workers)
        ]
        for t in threads:
            t.start()
        try:
            for seq in range(len(self.batches)):
                with self.cond:
                    while seq not in self.ready and (self.error is None or seq < self.error_seq):
                        self.cond.wait()
                    if seq not in self.ready:
                        raise LoaderError(f"loader worker failed on epoch {self.epoch}: {self.error!r}") from self.error
                    batch = self.ready.pop(seq)
                    self.consumed = seq + 1
                    self.cond.notify_all()
                yield batch
        finally:
            with self.cond:
                self.stop = True
                self.cond.notify_all()
            for t in threads:
                t.join()


def make_loader(ds: Dataset, cfg: LoaderConfig, policies: Sequence[AugmentPolicy]) -> ViewLoader:
    return ViewLoader(ds, cfg, policies)


def loader_iter(ds: Dataset, cfg: LoaderConfig, policies: Sequence[AugmentPolicy], epoch: int = 0) -> Iterator[ViewBatch]:
    return ViewLoader(ds, cfg, policies).iter_epoch(epoch)


@dataclass
class BenchmarkRow:
    label: str
    workers: int
    buffer: int
    pipelined: bool
    epoch_seconds: float
    imgs_per_sec: float
    speedup_pct: float
    buffer_bytes: int


def benchmark_loader(
    ds: Dataset,
    cfg_naive: LoaderConfig,
    cfg_pipelined: LoaderConfig | Sequence[LoaderConfig],
    policies: Sequence[AugmentPolicy],
    epochs: int = 1,
) -> list[BenchmarkRow]:
    """Time full epochs of the naive loader against one or more pipelined configs.

    Speedup is ``(t_naive / t_pipelined - 1) * 100``; buffer memory is the
    analytic size of ``Q`` batches of all views in float32.
    """
    configs = [cfg_pipelined] if isinstance(cfg_pipelined, LoaderConfig) else list(cfg_pipelined)
    per_image = 4 * int(np.prod(ds.image_shape)) * len(policies)

    def timed(cfg: LoaderConfig) -> tuple[float, int]:
        loader = ViewLoader(ds, cfg, policies)
        count = 0
        start = time.perf_counter()
        for e in range(epochs):
            for batch in loader.iter_epoch(e):
                count += batch.batch_size
        return (time.perf_counter() - start) / max(epochs, 1), count

    t_naive, n_naive = timed(cfg_naive)
    rows = [
        BenchmarkRow("naive", 1, 0, False, t_naive, n_naive / epochs / t_naive, 0.0,
                     cfg_naive.batch_size * per_image),
    ]
    for cfg in configs:
        t, n = timed(cfg)
        rows.append(
            BenchmarkRow(
                f"P={cfg.workers},Q={cfg.buffer}" if cfg.pipelined else "naive",
                cfg.workers,
                cfg.buffer,
                cfg.pipelined,
                t,
                n / epochs / t,
                (t_naive / t - 1.0) * 100.0,
                cfg.buffer * cfg.batch_size * per_image,
            )
        )
    return rows
