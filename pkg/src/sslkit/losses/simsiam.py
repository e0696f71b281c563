import torch

from ..ndiff import ShapeError
from .common import cosine_sim


def simsiam_loss(p1: torch.Tensor, p2: torch.Tensor, z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    """Negative cosine similarity with stop-gradient on the projections."""
    if not (p1.shape == p2.shape == z1.shape == z2.shape):
        raise ShapeError("simsiam_loss", {"p1": tuple(p1.shape), "z1": tuple(z1.shape)})
    return -0.5 * (cosine_sim(p1, z2.detach()).mean() + cosine_sim(p2, z1.detach()).mean())
