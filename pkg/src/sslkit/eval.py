"""Offline evaluation of frozen representations and embedding export."""

from __future__ import annotations

import csv
import hashlib
import logging
import os
import warnings
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import CheckpointState, load_checkpoint
from .data import Dataset
from .ndiff import Rng, l2_normalize
from .trainer import OptimizerState, Session, extract_features, session_from_checkpoint, sgd_step, topk_accuracy

log = logging.getLogger(__name__)

CheckpointLike = Union[str, os.PathLike, CheckpointState, Session, nn.Module]


def load_backbone(checkpoint: CheckpointLike) -> nn.Module:
    if isinstance(checkpoint, nn.Module):
        return checkpoint
    if isinstance(checkpoint, Session):
        return checkpoint.method.backbone
    if not isinstance(checkpoint, CheckpointState):
        checkpoint = load_checkpoint(checkpoint)
    return session_from_checkpoint(checkpoint).method.backbone


def parameter_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def linear_eval_features(
    train_x: torch.Tensor,
    train_y: torch.Tensor,
    test_x: torch.Tensor,
    test_y: torch.Tensor,
    epochs: int = 30,
    lr: float = 0.1,
    batch_size: int = 256,
    seed: int = 0,
    num_classes: Optional[int] = None,
) -> tuple[float, float]:
    """Fit a softmax classifier on fixed features; return test (top1, top5) in percent.

    Features are standardized with the training mean and std before fitting.
    """
    if train_x.shape[0] == 0:
        raise ValueError("linear_eval: empty training set")
    classes = num_classes or int(train_y.max()) + 1
    if test_y.numel() and int(test_y.max()) >= classes:
        raise ValueError(
            f"linear_eval: test labels reach class {int(test_y.max())} but the classifier has {classes} classes"
        )
    if train_x.shape[1] != test_x.shape[1]:
        raise ValueError("linear_eval: train and test feature dims differ")
    mean = train_x.mean(dim=0)
    std = train_x.std(dim=0, unbiased=False).clamp(min=1e-6)
    xtr = (train_x - mean) / std
    xte = (test_x - mean) / std
    rng = Rng([seed, 11])
    clf = nn.Linear(train_x.shape[1], classes)
    with torch.no_grad():
        clf.weight.zero_()
        clf.bias.zero_()
    opt = OptimizerState(lr, 0.9, 0.0)
    n = xtr.shape[0]
    for epoch in range(epochs):
        order = torch.from_numpy(rng.permutation(n))
        for i in range(0, n, batch_size):
            idx = order[i : i + batch_size]
            loss = F.cross_entropy(clf(xtr[idx]), train_y[idx])
            clf.zero_grad(set_to_none=True)
            loss.backward()
            sgd_step(clf.named_parameters(), opt)
    with torch.no_grad():
        logits = clf(xte)
    top1, top5 = topk_accuracy(logits, test_y)
    return top1, top5


def linear_eval_offline(
    checkpoint: CheckpointLike,
    ds_train: Dataset,
    ds_test: Dataset,
    epochs: int = 30,
    lr: float = 0.1,
    seed: int = 0,
) -> tuple[float, float]:
    """Linear probe on frozen backbone features (no train-time augmentation)."""
    backbone = load_backbone(checkpoint)
    if ds_test.num_classes > ds_train.num_classes:
        raise ValueError(
            f"class count mismatch: train has {ds_train.num_classes}, test has {ds_test.num_classes}"
        )
    before = parameter_hash(backbone)
    ftr = extract_features(backbone, ds_train.images)
    fte = extract_features(backbone, ds_test.images)
    result = linear_eval_features(ftr, ds_train.labels, fte, ds_test.labels, epochs, lr, seed=seed,
                                  num_classes=ds_train.num_classes)
    if parameter_hash(backbone) != before:
        raise RuntimeError("linear_eval_offline modified the backbone")
    return result


def knn_predict(
    train_x: torch.Tensor,
    train_y: torch.Tensor,
    test_x: torch.Tensor,
    k: int = 20,
    num_classes: Optional[int] = None,
    chunk: int = 1024,
) -> torch.Tensor:
    """Cosine k-NN vote weighted by similarity clipped at 0.

    Neighbour ties go to the lower training index, vote ties to the lower class.
    """
    n = train_x.shape[0]
    if n == 0:
        raise ValueError("knn_eval: empty training set")
    if not 1 <= k <= n:
        raise ValueError(f"knn_eval: k={k} must be in [1, {n}]")
    classes = num_classes or int(train_y.max()) + 1
    a = l2_normalize(train_x.double(), axis=1)
    preds = []
    for i in range(0, test_x.shape[0], chunk):
        q = l2_normalize(test_x[i : i + chunk].double(), axis=1)
        sim = q @ a.T
        order = torch.argsort(-sim, dim=1, stable=True)[:, :k]
        weights = sim.gather(1, order).clamp(min=0)
        votes = torch.zeros(q.shape[0], classes, dtype=torch.float64)
        votes.scatter_add_(1, train_y[order], weights)
        preds.append(votes.argmax(dim=1))
    return torch.cat(preds) if preds else torch.zeros(0, dtype=torch.long)


def knn_eval(checkpoint: CheckpointLike, ds_train: Dataset, ds_test: Dataset, k: int = 20) -> float:
    backbone = load_backbone(checkpoint)
    if len(ds_train) == 0:
        raise ValueError("knn_eval: empty training set")
    ftr = extract_features(backbone, ds_train.images)
    fte = extract_features(backbone, ds_test.images)
    pred = knn_predict(ftr, ds_train.labels, fte, k, max(ds_train.num_classes, ds_test.num_classes))
    if len(ds_test) == 0:
        return 0.0
    return 100.0 * float((pred == ds_test.labels).double().mean())


def pca2d(
    features: torch.Tensor | np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project onto the top-2 principal axes found by power iteration with deflation.

    Returns ``(projection N x 2, components 2 x d, explained variance (2,))``.
    """
    x = np.asarray(features.detach().cpu().numpy() if isinstance(features, torch.Tensor) else features,
                   dtype=np.float64)
    n, d = x.shape
    if n < 3:
        raise ValueError(f"pca2d needs at least 3 points, got {n}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (n - 1)
    scale = max(np.abs(cov).max(), 1e-300)
    components = np.zeros((2, d))
    variances = np.zeros(2)
    residual = cov.copy()
    start = np.random.default_rng(0).normal(size=(2, d))
    for axis in range(2):
        v = start[axis]
        v -= components[:axis].T @ (components[:axis] @ v)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = residual @ v
            w -= components[:axis].T @ (components[:axis] @ w)
            norm = np.linalg.norm(w)
            if norm <= 1e-12 * scale:
                break
            w /= norm
            converged = np.linalg.norm(w - v) < tol
            v = w
            if converged:
                break
        lam = float(v @ cov @ v)
        if lam <= 1e-12 * scale:
            if axis == 0:
                raise ValueError("pca2d: data has no variance")
            warnings.warn("pca2d: data has rank < 2; second axis zeroed", RuntimeWarning, stacklevel=2)
            break
        components[axis] = v
        variances[axis] = lam
        residual = residual - lam * np.outer(v, v)
    return xc @ components.T, components, variances


def write_embeddings(path: str | os.PathLike, features: torch.Tensor, ids, labels) -> None:
    feats = np.asarray(features.detach().cpu().numpy() if isinstance(features, torch.Tensor) else features,
                       dtype=np.float32)
    n = feats.shape[0]
    d = feats.shape[1] if feats.ndim == 2 else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([d, n])
        for i in range(n):
            w.writerow([int(ids[i]), int(labels[i]), *(repr(float(v)) for v in feats[i])])


def read_embeddings(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`write_embeddings`: ``(ids, labels, features float32)``."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        d, n = (int(v) for v in next(reader))
        rows = list(reader)
    if len(rows) != n:
        raise ValueError(f"{path}: header announces {n} rows, found {len(rows)}")
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
    feats = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float32).reshape(n, d)
    return ids, labels, feats


def export_embeddings(checkpoint: CheckpointLike, ds: Dataset, path: str | os.PathLike) -> int:
    backbone = load_backbone(checkpoint)
    feats = extract_features(backbone, ds.images)
    write_embeddings(path, feats, np.arange(len(ds)), ds.labels.numpy())
    return len(ds)
