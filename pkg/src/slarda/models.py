"""Backbone networks: conv encoder, recurrent context net, classifier head,
and the attention-based domain discriminator, plus the ModelBundle that ties
their parameters to a role (source / target / teacher) and trainability flags.

Bundles are single-writer: gradient updates happen on one thread, and
read-only inference from elsewhere is only safe between update steps.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import torch
import yaml
from torch import nn


class ShapeError(ValueError):
    """Input too short (or mis-shaped) for the configured network."""


@dataclass(frozen=True)
class EncoderConfig:
    """1-D conv stack settings.

    ``channels`` is the first conv layer's output width; widths double per
    layer unless ``widths`` overrides them explicitly.
    """

    num_layers: int
    channels: int
    kernel_size: int
    stride: int
    input_channels: int
    widths: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        for name in ("num_layers", "channels", "kernel_size", "stride", "input_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.widths is not None and len(self.widths) != self.num_layers:
            raise ValueError(
                f"widths has {len(self.widths)} entries for {self.num_layers} layers"
            )

    @property
    def layer_widths(self) -> tuple[int, ...]:
        if self.widths is not None:
            return tuple(self.widths)
        return tuple(self.channels * (2 ** i) for i in range(self.num_layers))

    @property
    def output_channels(self) -> int:
        return self.layer_widths[-1]


@dataclass(frozen=True)
class ContextNetConfig:
    """Recurrent summarizer used during pretraining."""

    hidden_dim: int
    input_dim: int
    num_layers: int = 1


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Attention-stack domain discriminator settings."""

    feedforward_dim: int
    input_channels: int
    num_layers: int
    num_heads: int
    hidden_dim: int
    max_seq_len: int = 2048

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    context: ContextNetConfig
    discriminator: DiscriminatorConfig
    num_classes: int
    cpc_horizon: int = 4

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        enc = dict(doc["encoder"])
        if enc.get("widths") is not None:
            enc["widths"] = tuple(enc["widths"])
        return cls(
            encoder=EncoderConfig(**enc),
            context=ContextNetConfig(**doc["context"]),
            discriminator=DiscriminatorConfig(**doc["discriminator"]),
            num_classes=doc["num_classes"],
            cpc_horizon=doc.get("cpc_horizon", 4),
        )


# ---------------------------------------------------------------------------
# Shape bookkeeping
# ---------------------------------------------------------------------------

def _conv_out(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def encoder_output_length(cfg: EncoderConfig, input_length: int) -> int:
    """Published temporal length of the encoder output for a given input length."""
    length = input_length
    for _ in range(cfg.num_layers):
        if length < cfg.kernel_size:
            raise ShapeError(
                f"input length {input_length} too short for the receptive field; "
                f"minimum is {encoder_min_input_length(cfg)}"
            )
        length = _conv_out(length, cfg.kernel_size, cfg.stride)
    return length


def encoder_min_input_length(cfg: EncoderConfig) -> int:
    """Smallest input length producing at least one output step."""
    length = 1
    for _ in range(cfg.num_layers):
        length = (length - 1) * cfg.stride + cfg.kernel_size
    return length


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

class ConvEncoder(nn.Module):
    """Stack of (conv1d -> batch norm -> ReLU) blocks, no padding."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        blocks = []
        in_ch = cfg.input_channels
        for width in cfg.layer_widths:
            blocks.append(nn.Sequential(
                nn.Conv1d(in_ch, width, kernel_size=cfg.kernel_size, stride=cfg.stride),
                nn.BatchNorm1d(width),
                nn.ReLU(),
            ))
            in_ch = width
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[1] != self.cfg.input_channels:
            raise ShapeError(
                f"expected input of shape (B, {self.cfg.input_channels}, K), got {tuple(x.shape)}"
            )
        # Raises with the minimum usable K before torch does, with a clearer message.
        encoder_output_length(self.cfg, x.shape[2])
        return self.blocks(x)


class ContextNet(nn.Module):
    """GRU summarizer: returns the final hidden state over a latent prefix."""

    def __init__(self, cfg: ContextNetConfig):
        super().__init__()
        self.cfg = cfg
        self.gru = nn.GRU(cfg.input_dim, cfg.hidden_dim, cfg.num_layers, batch_first=True)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.ndim != 3 or h.shape[1] != self.cfg.input_dim:
            raise ShapeError(
                f"expected latents of shape (B, {self.cfg.input_dim}, T), got {tuple(h.shape)}"
            )
        _, h_n = self.gru(h.transpose(1, 2))
        return h_n[-1]


class FuturePredictor(nn.Module):
    """One affine map per future offset k in 1..horizon."""

    def __init__(self, context_dim: int, latent_dim: int, horizon: int):
        super().__init__()
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        self.horizon = horizon
        self.heads = nn.ModuleList(nn.Linear(context_dim, latent_dim) for _ in range(horizon))

    def forward(self, k: int, r: torch.Tensor) -> torch.Tensor:
        if not 1 <= k <= self.horizon:
            raise ValueError(f"offset k={k} outside configured horizon 1..{self.horizon}")
        return self.heads[k - 1](r)


class MeanPoolClassifier(nn.Module):
    """Mean over time steps, then a single affine layer to class logits."""

    def __init__(self, input_dim: int, num_classes: int):
        super().__init__()
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.linear = nn.Linear(input_dim, num_classes)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.ndim != 3 or h.shape[1] != self.input_dim:
            raise ShapeError(
                f"expected features of shape (B, {self.input_dim}, T), got {tuple(h.shape)}"
            )
        return self.linear(h.mean(dim=2))


class AttentionBlock(nn.Module):
    """Pre-norm self-attention block: x + MHSA(LN(x)), then x + FF(LN(x))."""

    def __init__(self, hidden_dim: int, num_heads: int, feedforward_dim: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(hidden_dim)
        self.attn = nn.MultiheadAttention(hidden_dim, num_heads, batch_first=True)
        self.ln2 = nn.LayerNorm(hidden_dim)
        self.ff = nn.Sequential(
            nn.Linear(hidden_dim, feedforward_dim),
            nn.ReLU(),
            nn.Linear(feedforward_dim, hidden_dim),
        )

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        normed = self.ln1(x)
        attn_out, attn_weights = self.attn(
            normed, normed, normed, need_weights=return_attention,
            average_attn_weights=False,
        )
        x = x + attn_out
        x = x + self.ff(self.ln2(x))
        return (x, attn_weights) if return_attention else (x, None)


class AutoregressiveDiscriminator(nn.Module):
    """Domain classifier over the full temporal feature sequence.

    Pipeline: per-step linear projection + learned positional embedding ->
    layer norm -> attention blocks -> mean over time -> logistic head.
    """

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        self.project = nn.Linear(cfg.input_channels, cfg.hidden_dim)
        self.positions = nn.Embedding(cfg.max_seq_len, cfg.hidden_dim)
        self.input_norm = nn.LayerNorm(cfg.hidden_dim)
        self.blocks = nn.ModuleList(
            AttentionBlock(cfg.hidden_dim, cfg.num_heads, cfg.feedforward_dim)
            for _ in range(cfg.num_layers)
        )
        self.head = nn.Linear(cfg.hidden_dim, 1)

    def forward(self, h: torch.Tensor, return_attention: bool = False):
        if h.ndim != 3 or h.shape[1] != self.cfg.input_channels:
            raise ShapeError(
                f"expected features of shape (B, {self.cfg.input_channels}, T), got {tuple(h.shape)}"
            )
        t = h.shape[2]
        if t < 2:
            raise ShapeError(f"discriminator needs a sequence of at least 2 steps, got {t}")
        if t > self.cfg.max_seq_len:
            raise ShapeError(f"sequence length {t} exceeds max_seq_len {self.cfg.max_seq_len}")
        x = self.project(h.transpose(1, 2))
        x = x + self.positions(torch.arange(t, device=x.device))
        x = self.input_norm(x)
        maps = []
        for block in self.blocks:
            x, attn = block(x, return_attention=return_attention)
            if return_attention:
                maps.append(attn)
        prob = torch.sigmoid(self.head(x.mean(dim=1))).squeeze(-1)
        return (prob, maps) if return_attention else prob


class PooledDiscriminator(nn.Module):
    """Ablation discriminator: two-layer FC net on time-mean-pooled features."""

    def __init__(self, input_channels: int, hidden_dim: int = 64):
        super().__init__()
        self.input_channels = input_channels
        self.net = nn.Sequential(
            nn.Linear(input_channels, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, 1),
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.ndim != 3 or h.shape[1] != self.input_channels:
            raise ShapeError(
                f"expected features of shape (B, {self.input_channels}, T), got {tuple(h.shape)}"
            )
        return torch.sigmoid(self.net(h.mean(dim=2))).squeeze(-1)


# ---------------------------------------------------------------------------
# Operations (thin wrappers with the published contracts)
# ---------------------------------------------------------------------------

def encode(bundle: "ModelBundle", batch: torch.Tensor) -> torch.Tensor:
    """Temporal features H (B x C_f x K') for a batch (B x M x K)."""
    return bundle.encoder(batch)


def summarize_context(context_net: ContextNet, h_prefix: torch.Tensor) -> torch.Tensor:
    """Context vector r_t (B x hidden) from latents up to t (B x C_f x (t+1))."""
    return context_net(h_prefix)


def predict_future(future_heads: FuturePredictor, k: int, r_t: torch.Tensor) -> torch.Tensor:
    """Predicted future latent z_{t+k} = affine_k(r_t)."""
    return future_heads(k, r_t)


def classify(classifier: MeanPoolClassifier, h: torch.Tensor) -> torch.Tensor:
    """Class logits (B x C) from temporal features (mean-pooled over time)."""
    return classifier(h)


def discriminate(disc: nn.Module, h: torch.Tensor) -> torch.Tensor:
    """Domain probability in (0,1) per sample."""
    return disc(h)


# ---------------------------------------------------------------------------
# Model bundle
# ---------------------------------------------------------------------------

ROLES = ("source", "target", "teacher")
SUBNETS = ("encoder", "context", "classifier", "future_heads")


@dataclass
class ModelBundle:
    """Encoder + context net + classifier (+ CPC heads) with a role tag.

    Teacher bundles are never gradient-updated; trainability flags are
    enforced through requires_grad and through trainable_parameters(), which
    is what optimizers must be built from.
    """

    config: ModelConfig
    encoder: ConvEncoder
    context: ContextNet
    classifier: MeanPoolClassifier
    future_heads: FuturePredictor
    role: str = "source"
    trainable: dict = field(default_factory=lambda: {name: True for name in SUBNETS})
    step: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.role == "teacher":
            self.trainable = {name: False for name in SUBNETS}
        self.apply_trainability()

    def subnets(self) -> dict[str, nn.Module]:
        return {
            "encoder": self.encoder,
            "context": self.context,
            "classifier": self.classifier,
            "future_heads": self.future_heads,
        }

    def set_trainable(self, **flags: bool) -> None:
        unknown = set(flags) - set(SUBNETS)
        if unknown:
            raise ValueError(f"unknown sub-networks: {sorted(unknown)}")
        if self.role == "teacher" and any(flags.values()):
            raise ValueError("teacher bundles are never gradient-updated")
        self.trainable.update(flags)
        self.apply_trainability()

    def apply_trainability(self) -> None:
        for name, module in self.subnets().items():
            wanted = self.trainable[name] and self.role != "teacher"
            for p in module.parameters():
                p.requires_grad_(wanted)

    def trainable_parameters(self):
        for name, module in self.subnets().items():
            if self.trainable[name] and self.role != "teacher":
                yield from module.parameters()

    def freeze_all(self) -> None:
        self.set_trainable(**{name: False for name in SUBNETS})

    def train(self) -> None:
        for module in self.subnets().values():
            module.train()

    def eval(self) -> None:
        for module in self.subnets().values():
            module.eval()

    def to(self, dtype: torch.dtype) -> "ModelBundle":
        for module in self.subnets().values():
            module.to(dtype)
        return self

    def logits(self, batch: torch.Tensor) -> torch.Tensor:
        return classify(self.classifier, encode(self, batch))

    def clone(self, role: Optional[str] = None) -> "ModelBundle":
        new = ModelBundle(
            config=self.config,
            encoder=copy.deepcopy(self.encoder),
            context=copy.deepcopy(self.context),
            classifier=copy.deepcopy(self.classifier),
            future_heads=copy.deepcopy(self.future_heads),
            role=role or self.role,
            trainable=dict(self.trainable),
            step=self.step,
        )
        return new

    def parameter_snapshot(self) -> dict[str, torch.Tensor]:
        """Detached copies of every parameter, keyed by sub-net/name."""
        snap = {}
        for net_name, module in self.subnets().items():
            for p_name, p in module.named_parameters():
                snap[f"{net_name}.{p_name}"] = p.detach().clone()
        return snap

    def save(self, directory: Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "role": self.role,
            "step": self.step,
            "trainable": dict(self.trainable),
            "model_config": self.config.to_dict(),
        }
        (directory / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False))
        for name, module in self.subnets().items():
            torch.save(module.state_dict(), directory / f"{name}.pt")

    @classmethod
    def load(cls, directory: Path) -> "ModelBundle":
        directory = Path(directory)
        manifest_path = directory / "manifest.yaml"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
        manifest = yaml.safe_load(manifest_path.read_text())
        config = ModelConfig.from_dict(manifest["model_config"])
        bundle = build_bundle(config, seed=0, role=manifest["role"])
        for name, module in bundle.subnets().items():
            module.load_state_dict(torch.load(directory / f"{name}.pt", weights_only=True))
        bundle.step = manifest["step"]
        bundle.trainable = dict(manifest["trainable"])
        bundle.apply_trainability()
        return bundle


def build_bundle(config: ModelConfig, seed: int, role: str = "source") -> ModelBundle:
    """Construct a bundle with seeded initialization."""
    if config.context.input_dim != config.encoder.output_channels:
        raise ValueError(
            f"context input_dim {config.context.input_dim} != encoder output width "
            f"{config.encoder.output_channels}"
        )
    torch.manual_seed(seed)
    encoder = ConvEncoder(config.encoder)
    context = ContextNet(config.context)
    classifier = MeanPoolClassifier(config.encoder.output_channels, config.num_classes)
    future_heads = FuturePredictor(
        config.context.hidden_dim, config.encoder.output_channels, config.cpc_horizon
    )
    return ModelBundle(
        config=config, encoder=encoder, context=context,
        classifier=classifier, future_heads=future_heads, role=role,
    )


def build_discriminator(config: DiscriminatorConfig, seed: int,
                        kind: str = "attention") -> nn.Module:
    torch.manual_seed(seed)
    if kind == "attention":
        return AutoregressiveDiscriminator(config)
    if kind == "pooled":
        return PooledDiscriminator(config.input_channels, hidden_dim=config.feedforward_dim)
    raise ValueError(f"unknown discriminator kind {kind!r} (use 'attention' or 'pooled')")
