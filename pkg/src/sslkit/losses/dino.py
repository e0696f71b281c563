from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn

from ..ndiff import log_softmax, softmax


class Center(nn.Module):
    """Running mean of teacher logits, subtracted before the teacher softmax."""

    def __init__(self, dim: int, momentum: float = 0.9):
        super().__init__()
        self.momentum = momentum
        self.register_buffer("value", torch.zeros(1, dim))


@torch.no_grad()
def center_update(center: Center, teacher_batch: torch.Tensor, momentum: float | None = None) -> None:
    m = center.momentum if momentum is None else momentum
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"center momentum must be in [0, 1], got {m}")
    mean = teacher_batch.detach().mean(dim=0, keepdim=True).to(center.value.dtype)
    center.value.copy_(m * center.value + (1 - m) * mean)


def dino_loss(
    student: Sequence[torch.Tensor],
    teacher: Sequence[torch.Tensor],
    center: torch.Tensor,
    student_temp: float = 0.1,
    teacher_temp: float = 0.04,
) -> torch.Tensor:
    """Cross entropy between centred, sharpened teacher and student distributions.

    Averaged over every (teacher view, student view) pair with distinct views.
    """
    if student_temp <= 0 or teacher_temp <= 0:
        raise ValueError("temperatures must be positive")
    c = center.detach()
    targets = [softmax((t.detach() - c) / teacher_temp, axis=1) for t in teacher]
    log_preds = [log_softmax(s / student_temp, axis=1) for s in student]
    total, pairs = 0.0, 0
    for i, p_t in enumerate(targets):
        for j, log_p in enumerate(log_preds):
            if i == j:
                continue
            total = total - (p_t * log_p).sum(dim=1).mean()
            pairs += 1
    if pairs == 0:
        raise ValueError("dino_loss needs at least two views")
    return total / pairs
