import torch

from ..ndiff import EPS


def cosine_sim(a: torch.Tensor, b: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Row-wise ``a.b / (|a||b| + eps)``."""
    return (a * b).sum(-1) / (a.norm(dim=-1) * b.norm(dim=-1) + eps)
