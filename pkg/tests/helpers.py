"""Small shared builders for method and trainer tests."""

import torch

from sslkit.augment import ViewBatch, generate_views
from sslkit.methods import METHOD_FIELDS, build, default_config
from sslkit.ndiff import Rng
from sslkit.trainer import OptimizerState, sgd_step

TINY_SHAPE = (3, 16, 16)


def tiny_config(name, batch=32, n_items=64, **over):
    """A few-thousand-parameter variant of the default config for ``name``."""
    fields = METHOD_FIELDS[name]
    base = {"backbone_widths": (8, 16), "image_shape": TINY_SHAPE, "proj_hidden": 32, "proj_out": 16}
    if "pred_hidden" in fields:
        base["pred_hidden"] = 16
    if "queue_size" in fields:
        base["queue_size"] = batch
    if "num_prototypes" in fields:
        base["num_prototypes"] = 8
    if "memory_size" in fields:
        base["memory_size"] = n_items
    if name == "wmse":
        base["proj_out"] = 8
        base["wmse_sub_batch"] = batch
    base.update(over)
    return default_config(name, **base)


def tiny_images(n=32, seed=0):
    return torch.rand(n, *TINY_SHAPE, generator=torch.Generator().manual_seed(seed))


def tiny_batch(cfg, n=32, seed=0, offset=0):
    images = tiny_images(n, seed)
    labels = torch.arange(n) % 4
    return generate_views(images, cfg.policies, Rng([seed, 7]), indices=torch.arange(offset, offset + n), labels=labels)


def prime(method, cfg, n_items=64):
    """Fill DC-V2 memory and run the first clustering pass; no-op otherwise."""
    if method.needs_memory:
        for start in range(0, n_items, 32):
            method.observe(tiny_batch(cfg, 32, seed=start, offset=start))
        method.epoch_hook()


@torch.no_grad()
def burn_in(method, batch: ViewBatch, steps: int = 40):
    """Run steps without parameter updates so running state settles.

    Queues fill, the DINO center converges to the teacher mean; weights do not
    change.
    """
    for _ in range(steps):
        method.training_step(batch)


def train_steps(method, batch: ViewBatch, steps: int, lr: float, total: int = 100):
    """Losses of ``steps`` consecutive SGD steps on one fixed batch."""
    opt = OptimizerState(lr=lr)
    losses = []
    for _ in range(steps):
        loss, _, _ = method.training_step(batch)
        losses.append(float(loss.detach()))
        for _, p in method.trainable_parameters():
            p.grad = None
        loss.backward()
        sgd_step(method.trainable_parameters(), opt)
        method.post_optimizer_hook(int(method.global_step), total)
    return losses


def built(name, seed=0, **over):
    cfg = tiny_config(name, **over)
    return build(cfg, Rng(seed)), cfg
