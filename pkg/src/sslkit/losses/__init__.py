"""Loss functions for every supported method plus their numerical helpers."""

from .barlow import barlow_loss, cross_correlation
from .byol import byol_loss
from .common import cosine_sim
from .contrastive import infonce_queue, nnclr_loss, nt_xent, supcon_loss
from .deepclusterv2 import deepclusterv2_loss, kmeans_objective, kmeans_spherical
from .dino import Center, center_update, dino_loss
from .queue import EmptyQueueError, FeatureQueue, queue_enqueue, queue_nearest
from .ressl import ressl_loss
from .simsiam import simsiam_loss
from .swav import sinkhorn, swav_loss
from .vicreg import vicreg_loss, vicreg_terms
from .wmse import whiten, wmse_loss

__all__ = [
    "Center",
    "EmptyQueueError",
    "FeatureQueue",
    "barlow_loss",
    "byol_loss",
    "center_update",
    "cosine_sim",
    "cross_correlation",
    "deepclusterv2_loss",
    "dino_loss",
    "infonce_queue",
    "kmeans_objective",
    "kmeans_spherical",
    "nnclr_loss",
    "nt_xent",
    "queue_enqueue",
    "queue_nearest",
    "ressl_loss",
    "simsiam_loss",
    "sinkhorn",
    "supcon_loss",
    "swav_loss",
    "vicreg_loss",
    "vicreg_terms",
    "whiten",
    "wmse_loss",
]
