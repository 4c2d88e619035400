"""EMA teacher, confidence-filtered pseudo labels, and the class-conditional
alignment loss.

The teacher mirrors the target bundle and is only ever moved by the momentum
update, never by gradients. It is owned by the adaptation loop; snapshots for
evaluation are safe between iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .models import ModelBundle


@dataclass
class TeacherState:
    """EMA mirror of a student bundle plus its momentum and update counter."""

    bundle: ModelBundle
    momentum: float
    updates: int = 0

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must be in [0, 1], got {self.momentum}")
        if self.bundle.role != "teacher":
            raise ValueError(f"teacher state needs a teacher-role bundle, got {self.bundle.role!r}")


@dataclass(frozen=True)
class PseudoLabelBatch:
    """Confident teacher predictions for one batch.

    ``indices`` point into the batch; every retained confidence is > threshold.
    """

    indices: torch.Tensor
    labels: torch.Tensor
    confidences: torch.Tensor
    threshold: float

    def __post_init__(self):
        if len(self.indices) != len(self.labels) or len(self.labels) != len(self.confidences):
            raise ValueError("indices, labels and confidences must have equal length")
        if len(self.confidences) and float(self.confidences.min()) <= self.threshold:
            raise ValueError("retained confidence at or below the threshold")

    def __len__(self) -> int:
        return len(self.indices)


def make_teacher(student: ModelBundle, momentum: float) -> TeacherState:
    """Teacher initialized as a copy of the student at adaptation start."""
    return TeacherState(bundle=student.clone(role="teacher"), momentum=momentum)


@torch.no_grad()
def ema_update(teacher: TeacherState, student: ModelBundle) -> TeacherState:
    """In-place momentum update: W_teacher <- a*W_teacher + (1-a)*W_student.

    Applies element-wise to every parameter and floating buffer (running
    batch-norm statistics); integer buffers are copied from the student.
    """
    a = teacher.momentum
    t_nets, s_nets = teacher.bundle.subnets(), student.subnets()
    for name in t_nets:
        t_params = dict(t_nets[name].named_parameters())
        s_params = dict(s_nets[name].named_parameters())
        for key, t_p in t_params.items():
            s_p = s_params[key]
            if t_p.shape != s_p.shape:
                raise ValueError(f"{name}.{key}: teacher shape {tuple(t_p.shape)} != "
                                 f"student shape {tuple(s_p.shape)}")
            t_p.mul_(a).add_(s_p, alpha=1.0 - a)
        t_bufs = dict(t_nets[name].named_buffers())
        s_bufs = dict(s_nets[name].named_buffers())
        for key, t_b in t_bufs.items():
            s_b = s_bufs[key]
            if t_b.is_floating_point():
                t_b.mul_(a).add_(s_b, alpha=1.0 - a)
            else:
                t_b.copy_(s_b)
    teacher.updates += 1
    return teacher


@torch.no_grad()
def confident_pseudo_labels(
    teacher: TeacherState,
    batch: torch.Tensor,
    threshold: float,
) -> PseudoLabelBatch:
    """Teacher predictions retained where the max softmax probability > threshold.

    Empty retention is a valid result.
    """
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"confidence threshold must be in [0, 1), got {threshold}")
    teacher.bundle.eval()
    probs = F.softmax(teacher.bundle.logits(batch), dim=1)
    confidences, labels = probs.max(dim=1)
    mask = confidences > threshold
    indices = torch.nonzero(mask, as_tuple=False).squeeze(1)
    return PseudoLabelBatch(
        indices=indices,
        labels=labels[mask],
        confidences=confidences[mask],
        threshold=threshold,
    )


def class_conditional_loss(logits: torch.Tensor, pl: PseudoLabelBatch) -> torch.Tensor:
    """Mean cross-entropy over retained samples against their pseudo labels.

    Zero when nothing was retained; gradients flow only through retained rows.
    """
    if len(pl) == 0:
        return torch.zeros((), dtype=logits.dtype)
    if int(pl.indices.max()) >= logits.shape[0]:
        raise ValueError(
            f"retained index {int(pl.indices.max())} out of range for batch of {logits.shape[0]}"
        )
    num_classes = logits.shape[1]
    if int(pl.labels.min()) < 0 or int(pl.labels.max()) >= num_classes:
        raise ValueError(f"pseudo labels outside [0, {num_classes})")
    return F.cross_entropy(logits[pl.indices], pl.labels)


def combined_target_loss(adv: torch.Tensor, ca: torch.Tensor, weight: float) -> torch.Tensor:
    """Target objective: adversarial term plus weighted class-conditional term."""
    if weight < 0:
        raise ValueError(f"class-conditional weight must be >= 0, got {weight}")
    return adv + weight * ca
