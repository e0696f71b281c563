from __future__ import annotations

import torch
import torch.nn.functional as F

from ..ndiff import ShapeError

VAR_EPS = 1e-4


def invariance(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(z1, z2)


def variance(z: torch.Tensor) -> torch.Tensor:
    std = torch.sqrt(z.var(dim=0) + VAR_EPS)
    return F.relu(1 - std).mean()


def covariance(z: torch.Tensor) -> torch.Tensor:
    n, d = z.shape
    zc = z - z.mean(dim=0)
    cov = zc.T @ zc / (n - 1)
    return ((cov**2).sum() - (torch.diagonal(cov) ** 2).sum()) / d


def vicreg_terms(z1: torch.Tensor, z2: torch.Tensor) -> dict[str, torch.Tensor]:
    if z1.shape != z2.shape:
        raise ShapeError("vicreg_loss", {"z1": tuple(z1.shape), "z2": tuple(z2.shape)})
    if z1.shape[0] < 2:
        raise ValueError("vicreg_loss needs a batch of at least 2")
    return {
        "sim": invariance(z1, z2),
        "var": variance(z1) + variance(z2),
        "cov": covariance(z1) + covariance(z2),
    }


def vicreg_loss(
    z1: torch.Tensor,
    z2: torch.Tensor,
    sim_weight: float = 25.0,
    var_weight: float = 25.0,
    cov_weight: float = 1.0,
) -> torch.Tensor:
    t = vicreg_terms(z1, z2)
    return sim_weight * t["sim"] + var_weight * t["var"] + cov_weight * t["cov"]
