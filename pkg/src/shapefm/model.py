"""Query/momentum model assembly: adapter + encoder + projection heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from .adapter import DEFAULT_SCALES, AdapterOutput, MultiScaleAdapter, ScaleConfig, num_windows
from .encoder import ClassificationHead, EncodedSequence, EncoderConfig, TokenEncoder
from .errors import ValidationError


@dataclass(frozen=True)
class ModelConfig:
    target_length: int = 512
    embed_dim: int = 256
    scales: tuple[tuple[int, int], ...] = DEFAULT_SCALES
    depth: int = 4
    heads: int = 8
    ff_dim: int = 512
    dropout: float = 0.1
    projector_dim: int = 128

    def __post_init__(self):
        ScaleConfig(self.scales)  # validates
        if self.target_length < max(w for w, _ in self.scales):
            raise ValidationError("target_length shorter than the coarsest window")

    def scale_config(self) -> ScaleConfig:
        return ScaleConfig(self.scales)

    def final_token_count(self) -> int:
        w, k = self.scales[-1]
        return num_windows(self.target_length, w, k)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            depth=self.depth,
            heads=self.heads,
            model_dim=self.embed_dim,
            ff_dim=self.ff_dim,
            dropout=self.dropout,
            max_positions=self.final_token_count(),
        )


def _mlp(dims: tuple[int, ...]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class _MomentumBranch(nn.Module):
    """Gradient-free EMA copy of adapter + encoder + projector."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.embed_dim
        self.adapter = MultiScaleAdapter(d, config.scale_config())
        self.encoder = TokenEncoder(config.encoder_config())
        self.projector = _mlp((d, d, config.projector_dim))


class ShapeModel(nn.Module):
    """The full model: a trainable query branch (adapter, encoder, projector,
    predictor, optional classification head) and a momentum branch holding
    EMA copies of the adapter, encoder, and projector."""

    def __init__(self, config: ModelConfig, num_classes: int | None = None):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.adapter = MultiScaleAdapter(d, config.scale_config())
        self.encoder = TokenEncoder(config.encoder_config())
        self.projector = _mlp((d, d, config.projector_dim))
        p = config.projector_dim
        self.predictor = _mlp((p, p, p))
        self.head = ClassificationHead(d, num_classes) if num_classes is not None else None

        self.momentum = _MomentumBranch(config)
        self._sync_momentum()
        self.momentum.requires_grad_(False)

    @property
    def num_classes(self) -> int | None:
        return self.head.num_classes if self.head is not None else None

    def attach_head(self, num_classes: int) -> None:
        self.head = ClassificationHead(self.config.embed_dim, num_classes)
        p = next(self.parameters())
        self.head.to(dtype=p.dtype, device=p.device)

    def _query_momentum_pairs(self) -> list[tuple[Tensor, Tensor]]:
        pairs = []
        for name in ("adapter", "encoder", "projector"):
            q = dict(getattr(self, name).named_parameters())
            k = dict(getattr(self.momentum, name).named_parameters())
            for pname in q:
                pairs.append((q[pname], k[pname]))
        return pairs

    def _sync_momentum(self) -> None:
        with torch.no_grad():
            for q, k in self._query_momentum_pairs():
                k.copy_(q)

    def momentum_update(self, m: float) -> None:
        """theta_k <- m * theta_k + (1 - m) * theta_q, elementwise."""
        qs, ks = zip(*self._query_momentum_pairs())
        momentum_step(qs, ks, m)

    def trainable_parameters(self):
        """Query-branch parameters (everything outside the momentum branch)."""
        return [p for name, p in self.named_parameters() if not name.startswith("momentum.")]

    def encode(self, x: Tensor) -> tuple[AdapterOutput, EncodedSequence]:
        """Query branch up to the refined tokens."""
        adapter_out = self.adapter(x)
        encoded = self.encoder(adapter_out.class_token, adapter_out.final_shape_tokens.tokens)
        return adapter_out, encoded

    def query_projection(self, x: Tensor) -> Tensor:
        _, encoded = self.encode(x)
        return self.predictor(self.projector(encoded.class_token_out))

    @torch.no_grad()
    def key_projection(self, x: Tensor) -> Tensor:
        adapter_out = self.momentum.adapter(x)
        encoded = self.momentum.encoder(
            adapter_out.class_token, adapter_out.final_shape_tokens.tokens
        )
        return self.momentum.projector(encoded.class_token_out)

    def logits(self, x: Tensor) -> Tensor:
        if self.head is None:
            raise ValidationError("model has no classification head")
        _, encoded = self.encode(x)
        return self.head(encoded.class_token_out)


def momentum_step(query_params, key_params, m: float) -> None:
    """In-place EMA of key parameters toward query parameters."""
    if not 0.0 <= m <= 1.0:
        raise ValidationError(f"momentum must be in [0, 1], got {m}")
    query_params = list(query_params)
    key_params = list(key_params)
    if len(query_params) != len(key_params):
        raise ValidationError(
            f"parameter count mismatch: {len(query_params)} vs {len(key_params)}"
        )
    with torch.no_grad():
        for q, k in zip(query_params, key_params):
            if q.shape != k.shape:
                raise ValidationError(f"shape mismatch: {tuple(q.shape)} vs {tuple(k.shape)}")
            k.mul_(m).add_(q.detach(), alpha=1.0 - m)
