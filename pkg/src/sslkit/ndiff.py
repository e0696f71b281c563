"""Differentiable tensor substrate.

Tensors are plain ``torch.Tensor`` objects; autograd supplies the backward
rules. This module adds the pieces torch does not give us directly: a
seedable RNG with forkable streams, shape-checked wrappers that raise
structured errors, an epsilon-guarded normalization, a Cholesky that reports
its failing pivot, and a finite-difference gradient checker.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

EPS = 1e-8


class ShapeError(ValueError):
    """Operand shapes do not conform."""

    def __init__(self, op: str, shapes: dict[str, tuple[int, ...]], reason: str = ""):
        self.op = op
        self.shapes = shapes
        parts = ", ".join(f"{k}={tuple(v)}" for k, v in shapes.items())
        msg = f"{op}: incompatible operands ({parts})"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class NotPositiveDefiniteError(ValueError):
    def __init__(self, pivot: float, index: int):
        self.pivot = pivot
        self.index = index
        super().__init__(
            f"cholesky: matrix is not positive definite (pivot {index} = {pivot:.3e})"
        )


class NonFiniteError(FloatingPointError):
    def __init__(self, where: str):
        self.where = where
        super().__init__(f"non-finite value produced by {where}")


class Rng:
    """Seeded random stream.

    Wraps a numpy ``Generator`` (PCG64). ``fork`` derives an independent child
    stream from the seed and a stream id, so worker ``i`` always sees the same
    numbers no matter how many siblings exist.
    """

    def __init__(self, seed: int | Sequence[int]):
        self.seed = seed
        self.np = np.random.default_rng(seed)

    def fork(self, *stream: int) -> "Rng":
        base = list(self.seed) if isinstance(self.seed, (list, tuple)) else [self.seed]
        return Rng(base + [int(s) for s in stream])

    def torch_generator(self) -> torch.Generator:
        g = torch.Generator()
        g.manual_seed(int(self.np.integers(0, 2**63 - 1)))
        return g

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.np.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.np.integers(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.np.normal(loc, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.np.permutation(n)

    def get_state(self) -> dict:
        return self.np.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.np.bit_generator.state = state


def _check_same(op: str, **tensors: torch.Tensor) -> None:
    shapes = {k: tuple(t.shape) for k, t in tensors.items()}
    if len(set(shapes.values())) > 1:
        raise ShapeError(op, shapes, "shapes must match")


def add(a, b):
    _broadcastable("add", a, b)
    return a + b


def sub(a, b):
    _broadcastable("sub", a, b)
    return a - b


def mul(a, b):
    _broadcastable("mul", a, b)
    return a * b


def div(a, b):
    _broadcastable("div", a, b)
    return a / b


def _broadcastable(op, a, b):
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(op, {"a": tuple(a.shape), "b": tuple(b.shape)}, "not broadcastable") from None


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[0 if b.dim() == 1 else -2]:
        raise ShapeError("matmul", {"a": tuple(a.shape), "b": tuple(b.shape)}, "inner dimensions differ")
    return a @ b


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias=None, stride: int = 1) -> torch.Tensor:
    """3x3 convolution with zero padding 1 and stride 1 or 2."""
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if x.dim() != 4 or weight.dim() != 4 or weight.shape[2:] != (3, 3) or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", {"x": tuple(x.shape), "weight": tuple(weight.shape)})
    return F.conv2d(x, weight, bias, stride=stride, padding=1)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    z = x - x.max(dim=axis, keepdim=True).values.detach()
    e = z.exp()
    return e / e.sum(dim=axis, keepdim=True)


def log_softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    z = x - x.max(dim=axis, keepdim=True).values.detach()
    return z - z.exp().sum(dim=axis, keepdim=True).log()


def l2_normalize(x: torch.Tensor, axis: int = -1, eps: float = EPS) -> torch.Tensor:
    return x / (x.norm(dim=axis, keepdim=True) + eps)


def batch_stats(x: torch.Tensor, unbiased: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-dimension mean and standard deviation over the batch (dim 0)."""
    if x.shape[0] < 2:
        raise ShapeError("batch_stats", {"x": tuple(x.shape)}, "need at least 2 rows")
    mean = x.mean(dim=0)
    var = ((x - mean) ** 2).sum(dim=0) / (x.shape[0] - (1 if unbiased else 0))
    return mean, var.sqrt()


def concat(tensors: Sequence[torch.Tensor], axis: int = 0) -> torch.Tensor:
    ref = tensors[0].shape
    for i, t in enumerate(tensors):
        if t.dim() != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != axis % len(ref)):
            raise ShapeError("concat", {"t0": tuple(ref), f"t{i}": tuple(t.shape)})
    return torch.cat(list(tensors), dim=axis)


def cholesky(a: torch.Tensor, tol: float = 1e-6) -> torch.Tensor:
    """Lower Cholesky factor of a symmetric positive definite matrix."""
    if a.dim() != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("cholesky", {"a": tuple(a.shape)}, "expected a square matrix")
    asym = (a - a.T).abs().max().item() if a.numel() else 0.0
    scale = max(1.0, a.abs().max().item()) if a.numel() else 1.0
    if asym > tol * scale:
        raise ValueError(f"cholesky: matrix is not symmetric (max asymmetry {asym:.3e})")
    factor, info = torch.linalg.cholesky_ex(a)
    if int(info) != 0:
        index, pivot = _first_bad_pivot(a.detach().double().numpy())
        raise NotPositiveDefiniteError(pivot, index)
    return factor


def _first_bad_pivot(a: np.ndarray) -> tuple[int, float]:
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - low[j, :j] @ low[j, :j]
        if pivot <= 0:
            return j, float(pivot)
        low[j, j] = np.sqrt(pivot)
        for i in range(j + 1, n):
            low[i, j] = (a[i, j] - low[i, :j] @ low[j, :j]) / low[j, j]
    return n - 1, float(low[-1, -1] ** 2)


def triangular_solve(a: torch.Tensor, b: torch.Tensor, lower: bool = True) -> torch.Tensor:
    """Solve ``a @ x = b`` for triangular ``a``."""
    if a.dim() != 2 or a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
        raise ShapeError("triangular_solve", {"a": tuple(a.shape), "b": tuple(b.shape)})
    return torch.linalg.solve_triangular(a, b, upper=not lower)


def backward(loss: torch.Tensor) -> None:
    if loss.numel() != 1:
        raise ShapeError("backward", {"loss": tuple(loss.shape)}, "loss must be a scalar")
    loss.reshape(()).backward()


def grad_check(
    f: Callable[[torch.Tensor], torch.Tensor],
    x: torch.Tensor,
    h: float = 1e-5,
) -> float:
    """Max elementwise ``|analytic - numeric| / max(1, |numeric|)``.

    The numeric gradient uses central differences on a float64 copy of ``x``.
    """
    x = x.detach().to(torch.float64).clone().requires_grad_(True)
    out = f(x)
    if out.numel() != 1:
        raise ShapeError("grad_check", {"f(x)": tuple(out.shape)}, "f must be scalar-valued")
    if not torch.isfinite(out).all():
        raise NonFiniteError("f(x) forward pass")
    (analytic,) = torch.autograd.grad(out.reshape(()), x, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(x)
    if not torch.isfinite(analytic).all():
        raise NonFiniteError("f(x) backward pass")

    numeric = torch.zeros_like(x)
    flat = x.detach().clone().reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = f(flat.view_as(x)).item()
            flat[i] = orig - h
            down = f(flat.view_as(x)).item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"f(x) perturbed at element {i}")
            numeric.view(-1)[i] = (up - down) / (2 * h)
    err = (analytic - numeric).abs() / numeric.abs().clamp(min=1.0)
    return float(err.max()) if err.numel() else 0.0
