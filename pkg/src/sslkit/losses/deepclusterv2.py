from __future__ import annotations

import torch
import torch.nn.functional as F

from ..ndiff import Rng, ShapeError, l2_normalize


def kmeans_spherical(
    features: torch.Tensor,
    k: int,
    rng: Rng,
    iters: int = 10,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Cosine k-means on unit-norm rows.

    Alternates nearest-centroid assignment (lowest index wins ties) with a
    mean-and-renormalize update. A cluster that ends up empty is re-seeded at
    the point currently farthest from its own centroid.

    Returns ``(centroids K x d, assignments N)``.
    """
    n = features.shape[0]
    if k > n:
        raise ValueError(f"kmeans_spherical: K={k} exceeds number of points N={n}")
    if k < 1:
        raise ValueError("kmeans_spherical: K must be >= 1")
    f = features.detach()
    centroids = f[torch.from_numpy(rng.np.choice(n, size=k, replace=False))].clone()
    assign = torch.zeros(n, dtype=torch.long)
    for _ in range(iters):
        sim = f @ centroids.T
        best, assign = sim.max(dim=1)
        sums = torch.zeros_like(centroids).index_add_(0, assign, f)
        counts = torch.bincount(assign, minlength=k)
        taken: set[int] = set()
        for c in torch.nonzero(counts == 0).flatten().tolist():
            order = torch.argsort(best, stable=True).tolist()
            far = next(i for i in order if i not in taken)
            taken.add(far)
            sums[c] = f[far]
            best[far] = 2.0
        centroids = l2_normalize(sums, axis=1)
    assign = (f @ centroids.T).argmax(dim=1)
    return centroids, assign


def kmeans_objective(features: torch.Tensor, centroids: torch.Tensor, assign: torch.Tensor) -> float:
    return float((1 - (features * centroids[assign]).sum(dim=1)).sum())


def deepclusterv2_loss(
    z: torch.Tensor,
    prototypes: torch.Tensor,
    assigned: torch.Tensor,
    temperature: float = 0.1,
) -> torch.Tensor:
    """Cross entropy of prototype scores against the last clustering pass."""
    if assigned.shape[0] != z.shape[0]:
        raise ShapeError("deepclusterv2_loss", {"z": tuple(z.shape), "assigned": tuple(assigned.shape)})
    if (assigned < 0).any():
        missing = torch.nonzero(assigned < 0).flatten().tolist()
        raise KeyError(f"deepclusterv2_loss: no cluster assignment for batch rows {missing}")
    logits = l2_normalize(z, axis=1) @ prototypes.T / temperature
    return F.cross_entropy(logits, assigned)
