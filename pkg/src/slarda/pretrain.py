"""Source pretraining: supervised classification plus contrastive future
prediction over the encoder's temporal latents.

Per batch a time step t is drawn, the recurrent context net summarizes the
latents up to t, and one affine head per offset k predicts the latent at t+k.
Each prediction is scored against every sample's true latent at that offset
within the mini-batch; the sample's own latent is the positive.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F

from .data import DomainDataset
from .models import (
    ModelBundle,
    classify,
    encode,
    encoder_output_length,
    summarize_context,
)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class CPCConfig:
    """Contrastive future-prediction settings.

    ``horizon`` is the number of future offsets predicted; t is drawn
    uniformly from [t_min, K' - horizon - 1] per batch. Scores are the
    temperature-free bilinear exp(h^T z); that is the only supported scoring.
    """

    horizon: int = 4
    t_min: int = 0
    temperature_free: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.t_min < 0:
            raise ValueError(f"t_min must be >= 0, got {self.t_min}")
        if not self.temperature_free:
            raise ValueError("temperature-scaled scores are not supported")


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    weight_decay: float = 3e-4
    cpc_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 (contrastive loss needs negatives)")
        if self.cpc_weight < 0:
            raise ValueError(f"cpc_weight must be >= 0, got {self.cpc_weight}")


def similarity_score(h: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Bilinear similarity exp(h^T z) between two equal-length vectors."""
    if h.shape != z.shape or h.ndim != 1:
        raise ValueError(f"expected equal-shape vectors, got {tuple(h.shape)} and {tuple(z.shape)}")
    if not (torch.isfinite(h).all() and torch.isfinite(z).all()):
        raise ValueError("similarity_score: non-finite input")
    return torch.exp(torch.dot(h, z))


def cpc_loss(
    r_t: torch.Tensor,
    future_latents: Mapping[int, torch.Tensor],
    future_heads,
) -> torch.Tensor:
    """Contrastive loss over in-batch negatives, averaged over offsets.

    For each offset k the predicted z = affine_k(r_t) is scored against every
    sample's true latent at t+k; the diagonal is the positive, so the loss is
    a B-way softmax cross-entropy on the bilinear logits.
    """
    batch = r_t.shape[0]
    if batch < 2:
        raise ValueError(f"contrastive loss needs a batch of >= 2, got {batch}")
    targets = torch.arange(batch, device=r_t.device)
    losses = []
    for k in sorted(future_latents):
        h_k = future_latents[k]
        if h_k.shape[0] != batch:
            raise ValueError(f"offset {k}: {h_k.shape[0]} latents for batch of {batch}")
        z = future_heads(k, r_t)
        logits = z @ h_k.T  # logits[i, j] = h_j . z_i
        losses.append(F.cross_entropy(logits, targets))
    return torch.stack(losses).mean()


def supervised_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean categorical cross-entropy on softmaxed logits."""
    num_classes = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels outside [0, {num_classes}): {labels.tolist()}")
    return F.cross_entropy(logits, labels)


def _as_tensor(x: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(x, dtype=dtype)


@torch.no_grad()
def accuracy(bundle: ModelBundle, x: torch.Tensor, y: torch.Tensor) -> float:
    bundle.eval()
    preds = bundle.logits(x).argmax(dim=1)
    return float((preds == y).float().mean())


def pretrain_source(
    bundle: ModelBundle,
    source: DomainDataset,
    cpc: CPCConfig,
    cfg: PretrainConfig,
) -> tuple[ModelBundle, list[dict]]:
    """Train the source bundle on supervised + contrastive losses (unit weights).

    The encoder, context net, classifier and all future-prediction heads are
    updated jointly. The best checkpoint by validation supervised accuracy is
    restored at the end. With cpc_weight == 0 the contrastive branch is
    skipped entirely, reducing this to plain supervised training.

    Returns the trained bundle and per-epoch curves
    (epoch, sup_loss, cpc_loss, val_acc).
    """
    if not source.labeled:
        raise ValueError("pretraining requires a labeled source domain")
    if bundle.role != "source":
        raise ValueError(f"expected a source-role bundle, got {bundle.role!r}")

    x_train, y_train = source.split_arrays("train")
    x_val, y_val = source.split_arrays("val")
    x_train_t = _as_tensor(x_train)
    y_train_t = torch.as_tensor(y_train, dtype=torch.long)
    x_val_t = _as_tensor(x_val)
    y_val_t = torch.as_tensor(y_val, dtype=torch.long)

    k_out = encoder_output_length(bundle.config.encoder, source.window_size)
    use_cpc = cfg.cpc_weight != 0.0
    if use_cpc:
        if cpc.horizon != bundle.config.cpc_horizon:
            raise ValueError(
                f"cpc horizon {cpc.horizon} != bundle's configured horizon "
                f"{bundle.config.cpc_horizon}"
            )
        t_max = k_out - cpc.horizon - 1
        if t_max < cpc.t_min:
            raise ValueError(
                f"encoder output length {k_out} leaves no valid t in "
                f"[{cpc.t_min}, {t_max}] for horizon {cpc.horizon}"
            )

    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(
        list(bundle.trainable_parameters()),
        lr=cfg.learning_rate, weight_decay=cfg.weight_decay,
    )

    n = x_train_t.shape[0]
    if n < cfg.batch_size:
        raise ValueError(f"train split of {n} samples is smaller than batch_size {cfg.batch_size}")
    curves: list[dict] = []
    best_acc = -1.0
    best_state = None

    for epoch in range(cfg.epochs):
        bundle.train()
        perm = torch.randperm(n, generator=gen)
        sup_losses, cpc_losses = [], []
        # trailing partial batch is dropped so every contrastive set has B negatives
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb = x_train_t[idx], y_train_t[idx]
            h = encode(bundle, xb)
            loss_sup = supervised_loss(classify(bundle.classifier, h), yb)
            if use_cpc:
                t = int(torch.randint(cpc.t_min, t_max + 1, (1,), generator=gen))
                r = summarize_context(bundle.context, h[:, :, : t + 1])
                future = {k: h[:, :, t + k] for k in range(1, cpc.horizon + 1)}
                loss_cpc = cpc_loss(r, future, bundle.future_heads)
            else:
                loss_cpc = torch.zeros(())
            total = loss_sup + cfg.cpc_weight * loss_cpc
            if not torch.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {start}: "
                    f"sup={loss_sup.item():.6g} cpc={loss_cpc.item():.6g}"
                )
            opt.zero_grad()
            total.backward()
            opt.step()
            sup_losses.append(loss_sup.item())
            cpc_losses.append(loss_cpc.item())

        val_acc = accuracy(bundle, x_val_t, y_val_t)
        curves.append({
            "epoch": epoch,
            "sup_loss": float(np.mean(sup_losses)),
            "cpc_loss": float(np.mean(cpc_losses)),
            "val_acc": val_acc,
        })
        if val_acc > best_acc:
            best_acc = val_acc
            best_state = {
                name: copy.deepcopy(module.state_dict())
                for name, module in bundle.subnets().items()
            }
            bundle.step = epoch + 1

    if best_state is not None:
        for name, module in bundle.subnets().items():
            module.load_state_dict(best_state[name])
    bundle.eval()
    return bundle, curves
