import torch

from ..ndiff import ShapeError
from .common import cosine_sim


def byol_loss(p1: torch.Tensor, p2: torch.Tensor, t1: torch.Tensor, t2: torch.Tensor) -> torch.Tensor:
    """Symmetrized ``2 - 2 cos`` between predictions and the other view's target.

    Targets are detached here, so callers may pass them with history attached.
    """
    for name, t in (("p2", p2), ("t1", t1), ("t2", t2)):
        if t.shape != p1.shape:
            raise ShapeError("byol_loss", {"p1": tuple(p1.shape), name: tuple(t.shape)})
    return (2 - 2 * cosine_sim(p1, t2.detach())).mean() + (2 - 2 * cosine_sim(p2, t1.detach())).mean()
