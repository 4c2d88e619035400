"""Adversarial adaptation of the target encoder against the autoregressive
discriminator, with EMA-teacher pseudo labeling for class-conditional
alignment.

Each iteration: sample both domains, update the discriminator to tell frozen
source features from target features, then update the target encoder on the
inverted-label adversarial loss plus the weighted class-conditional loss, and
finally move the teacher by one EMA step. The source bundle stays frozen
throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .data import DomainDataset
from .models import (
    DiscriminatorConfig,
    ModelBundle,
    build_discriminator,
    classify,
    discriminate,
    encode,
)
from .pretrain import TrainingDivergedError, accuracy
from .teacher import (
    TeacherState,
    class_conditional_loss,
    combined_target_loss,
    confident_pseudo_labels,
    ema_update,
    make_teacher,
)

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


class ProtocolViolationError(RuntimeError):
    """Unsupervised-adaptation protocol broken (labeled target training data)."""


@dataclass(frozen=True)
class AdaptConfig:
    """All scalars of the adaptation phase."""

    iterations: int
    batch_size: int
    disc_learning_rate: float
    encoder_learning_rate: float
    weight_decay: float = 3e-4
    lambda_ca: float = 0.005
    teacher_momentum: float = 0.996
    confidence_threshold: float = 0.9
    seed: int = 0
    train_classifier: bool = False
    disc_kind: str = "attention"

    def __post_init__(self):
        if self.lambda_ca < 0:
            raise ValueError(f"lambda_ca must be >= 0, got {self.lambda_ca}")
        if not 0.0 <= self.teacher_momentum <= 1.0:
            raise ValueError(f"teacher_momentum must be in [0, 1], got {self.teacher_momentum}")
        if not 0.0 <= self.confidence_threshold < 1.0:
            raise ValueError(
                f"confidence_threshold must be in [0, 1), got {self.confidence_threshold}"
            )
        if self.disc_kind not in ("attention", "pooled"):
            raise ValueError(f"disc_kind must be 'attention' or 'pooled', got {self.disc_kind!r}")


_clamp_seen = False


def _guarded_probs(disc, h: torch.Tensor) -> torch.Tensor:
    global _clamp_seen
    probs = discriminate(disc, h)
    low = probs.detach().min().item()
    high = probs.detach().max().item()
    if low < PROB_EPS or high > 1.0 - PROB_EPS:
        # saturated outputs are routine late in adversarial training; warn once
        level = logging.DEBUG if _clamp_seen else logging.WARNING
        logger.log(level, "discriminator output clamped to [%g, %g] (saw [%g, %g])",
                   PROB_EPS, 1.0 - PROB_EPS, low, high)
        _clamp_seen = True
    return probs.clamp(PROB_EPS, 1.0 - PROB_EPS)


def discriminator_loss(disc, h_source: torch.Tensor, h_target: torch.Tensor) -> torch.Tensor:
    """-E[log D(H_S)] - E[log(1 - D(H_T))]: source labeled 1, target labeled 0."""
    if h_source.shape[0] == 0 or h_target.shape[0] == 0:
        raise ValueError("both domain batches must be nonempty")
    p_s = _guarded_probs(disc, h_source)
    p_t = _guarded_probs(disc, h_target)
    return -torch.log(p_s).mean() - torch.log(1.0 - p_t).mean()


def adversarial_loss(disc, h_target: torch.Tensor) -> torch.Tensor:
    """Inverted-label encoder objective -E[log D(H_T)].

    The encoder pushes target features toward the source label; this is the
    non-saturating form implied by the label inversion in the training
    procedure.
    """
    if h_target.shape[0] == 0:
        raise ValueError("target batch must be nonempty")
    return -torch.log(_guarded_probs(disc, h_target)).mean()


def _assert_unchanged(before: dict[str, torch.Tensor], module, tag: str) -> None:
    for name, param in module.named_parameters():
        if not torch.equal(before[name], param):
            raise AssertionError(f"{tag}: parameter {name} changed")


def adapt_target(
    source_bundle: ModelBundle,
    source_data: DomainDataset,
    target_data: DomainDataset,
    cfg: AdaptConfig,
    disc_config: Optional[DiscriminatorConfig] = None,
    audit: bool = False,
) -> tuple[ModelBundle, TeacherState, torch.nn.Module, list[dict]]:
    """Run the adversarial adaptation loop.

    The target bundle starts from the source weights; its classifier stays a
    frozen copy of the source classifier unless cfg.train_classifier is set.
    With audit=True every step bitwise-verifies that the discriminator update
    touched no encoder parameter and vice versa.

    Returns (target bundle, teacher state, discriminator, per-iteration curves).
    """
    if target_data.labeled:
        raise ProtocolViolationError(
            "target training data is flagged labeled; unsupervised adaptation forbids this"
        )
    if source_bundle.role != "source":
        raise ValueError(f"expected a source-role bundle, got {source_bundle.role!r}")

    source_bundle.freeze_all()
    source_bundle.eval()

    target_bundle = source_bundle.clone(role="target")
    target_bundle.set_trainable(
        encoder=True, classifier=cfg.train_classifier, context=False, future_heads=False,
    )
    teacher = make_teacher(target_bundle, cfg.teacher_momentum)

    disc = build_discriminator(
        disc_config or source_bundle.config.discriminator, seed=cfg.seed, kind=cfg.disc_kind,
    )

    x_source, _ = source_data.split_arrays("train")
    x_target, _ = target_data.split_arrays("train")
    x_val, y_val = target_data.split_arrays("val")
    xs = torch.as_tensor(x_source, dtype=torch.float32)
    xt = torch.as_tensor(x_target, dtype=torch.float32)
    xv = torch.as_tensor(x_val, dtype=torch.float32)
    yv = torch.as_tensor(y_val, dtype=torch.long)
    val_labeled = bool((yv >= 0).all())

    gen = torch.Generator().manual_seed(cfg.seed)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.disc_learning_rate,
                             weight_decay=cfg.weight_decay)
    opt_e = torch.optim.Adam(list(target_bundle.trainable_parameters()),
                             lr=cfg.encoder_learning_rate, weight_decay=cfg.weight_decay)

    curves: list[dict] = []
    for iteration in range(cfg.iterations):
        idx_s = torch.randint(xs.shape[0], (cfg.batch_size,), generator=gen)
        idx_t = torch.randint(xt.shape[0], (cfg.batch_size,), generator=gen)
        xb_s, xb_t = xs[idx_s], xt[idx_t]

        target_bundle.train()
        with torch.no_grad():
            h_s = encode(source_bundle, xb_s)
        h_t = encode(target_bundle, xb_t)

        # Discriminator step on detached target features.
        if audit:
            enc_before = {n: p.detach().clone() for n, p in target_bundle.encoder.named_parameters()}
        loss_d = discriminator_loss(disc, h_s, h_t.detach())
        opt_d.zero_grad()
        loss_d.backward()
        opt_d.step()
        if audit:
            _assert_unchanged(enc_before, target_bundle.encoder, "discriminator step")

        # Encoder step against the updated discriminator, labels inverted.
        if audit:
            disc_before = {n: p.detach().clone() for n, p in disc.named_parameters()}
            teacher_before = teacher.bundle.parameter_snapshot()
        h_t = encode(target_bundle, xb_t)
        loss_adv = adversarial_loss(disc, h_t)
        pseudo = confident_pseudo_labels(teacher, xb_t, cfg.confidence_threshold)
        loss_ca = class_conditional_loss(classify(target_bundle.classifier, h_t), pseudo)
        loss_total = combined_target_loss(loss_adv, loss_ca, cfg.lambda_ca)
        if not torch.isfinite(loss_total):
            raise TrainingDivergedError(
                f"non-finite loss at iteration {iteration}: "
                f"adv={loss_adv.item():.6g} ca={loss_ca.item():.6g}"
            )
        opt_e.zero_grad()
        loss_total.backward()
        opt_e.step()
        if audit:
            _assert_unchanged(disc_before, disc, "encoder step")
            for key, value in teacher.bundle.parameter_snapshot().items():
                if not torch.equal(teacher_before[key], value):
                    raise AssertionError(f"optimizer step changed teacher parameter {key}")

        ema_update(teacher, target_bundle)
        target_bundle.step = iteration + 1

        val_acc = accuracy(target_bundle, xv, yv) if val_labeled else float("nan")
        curves.append({
            "iteration": iteration,
            "disc_loss": loss_d.item(),
            "adv_loss": loss_adv.item(),
            "ca_loss": loss_ca.item(),
            "retained_fraction": len(pseudo) / cfg.batch_size,
            "mean_confidence": float(pseudo.confidences.mean()) if len(pseudo) else float("nan"),
            "target_val_acc": val_acc,
        })

    target_bundle.eval()
    return target_bundle, teacher, disc, curves
