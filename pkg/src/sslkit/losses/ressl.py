import torch

from ..ndiff import l2_normalize, log_softmax, softmax
from .queue import EmptyQueueError, FeatureQueue


def ressl_loss(
    z_student: torch.Tensor,
    z_teacher: torch.Tensor,
    queue: FeatureQueue,
    student_temp: float = 0.1,
    teacher_temp: float = 0.04,
) -> torch.Tensor:
    """Relational consistency: match the student's similarity distribution over
    the queue to the (sharper) teacher distribution."""
    if queue.filled < 2:
        raise EmptyQueueError(f"ressl_loss: queue needs at least 2 entries, has {queue.filled}")
    bank = queue.entries().detach().to(z_student.dtype)
    zs = l2_normalize(z_student, axis=1)
    zt = l2_normalize(z_teacher.detach(), axis=1)
    p_t = softmax(zt @ bank.T / teacher_temp, axis=1)
    log_p_s = log_softmax(zs @ bank.T / student_temp, axis=1)
    return -(p_t * log_p_s).sum(dim=1).mean()
