import warnings

import torch

from ..ndiff import ShapeError, batch_stats

STD_EPS = 1e-5


def _standardize(z: torch.Tensor) -> torch.Tensor:
    mean, std = batch_stats(z)
    if (std < STD_EPS).any():
        warnings.warn("barlow_loss: a feature dimension has (near) zero variance", RuntimeWarning, stacklevel=3)
        std = std.clamp(min=STD_EPS)
    return (z - mean) / std


def cross_correlation(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    if z1.shape != z2.shape:
        raise ShapeError("barlow_loss", {"z1": tuple(z1.shape), "z2": tuple(z2.shape)})
    if z1.shape[0] < 2:
        raise ValueError("barlow_loss needs a batch of at least 2")
    return _standardize(z1).T @ _standardize(z2) / z1.shape[0]


def barlow_loss(z1: torch.Tensor, z2: torch.Tensor, lamb: float = 5e-3) -> torch.Tensor:
    """Redundancy reduction: push the cross-correlation matrix toward identity.

    ``lamb`` weighs the off-diagonal terms.
    """
    if lamb < 0:
        raise ValueError("lamb must be >= 0")
    c = cross_correlation(z1, z2)
    diag = torch.diagonal(c)
    on_diag = ((1 - diag) ** 2).sum()
    off_diag = (c**2).sum() - (diag**2).sum()
    return on_diag + lamb * off_diag
