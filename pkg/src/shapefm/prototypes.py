"""Class prototypes with EMA updates, pseudo-labeling, and contrastive losses.

Prototypes are plain state: they are updated only by exponential moving
average and never receive gradients. All losses treat them as constants.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import torch
from torch import Tensor

from .errors import ValidationError

COSINE_EPS = 1e-8


@dataclass(frozen=True)
class ContrastiveConfig:
    """Temperature, top-token ratio, and instance/shape mixing weight."""

    tau: float = 0.2
    epsilon: float = 0.6
    lam: float = 0.01

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValidationError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if not 0.0 < self.lam < 1.0:
            raise ValidationError(f"lambda must be in (0, 1), got {self.lam}")


class PrototypeStore:
    """C per-class prototype vectors plus EMA state."""

    def __init__(self, prototypes: Tensor, beta: float = 0.9, update_counts: Tensor | None = None):
        if prototypes.ndim != 2 or prototypes.shape[0] < 1:
            raise ValidationError(f"prototypes must be (C >= 1, d), got {tuple(prototypes.shape)}")
        if not torch.isfinite(prototypes).all():
            raise ValidationError("prototypes must be finite")
        if not 0.0 < beta < 1.0:
            raise ValidationError(f"beta must be in (0, 1), got {beta}")
        self.prototypes = prototypes.detach().clone()
        self.beta = beta
        if update_counts is None:
            update_counts = torch.zeros(prototypes.shape[0], dtype=torch.int64)
        self.update_counts = update_counts.clone()

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def clone(self) -> "PrototypeStore":
        return PrototypeStore(self.prototypes, self.beta, self.update_counts)

    def ema_update(self, class_id: int, class_token_out: Tensor) -> None:
        """p_y <- beta * p_y + (1 - beta) * token; only class_id changes."""
        if not 0 <= class_id < self.num_classes:
            raise ValidationError(f"class id {class_id} out of range [0, {self.num_classes})")
        token = class_token_out.detach().to(self.prototypes.dtype)
        if token.shape != (self.dim,):
            raise ValidationError(f"expected a ({self.dim},) token, got {tuple(token.shape)}")
        if not torch.isfinite(token).all():
            raise ValidationError("token must be finite")
        self.prototypes[class_id] = self.beta * self.prototypes[class_id] + (1.0 - self.beta) * token
        self.update_counts[class_id] += 1

    def pseudo_label(self, class_token_out: Tensor) -> Tensor:
        """Nearest prototype by cosine similarity; ties go to the lowest id.

        Accepts a (d,) token or a (B, d) batch. Pairs involving a zero-norm
        token or prototype get similarity -1 (with a warning).
        """
        token = class_token_out.detach()
        squeeze = token.ndim == 1
        if squeeze:
            token = token.unsqueeze(0)
        sims = _degenerate_aware_cosine(token, self.prototypes)
        labels = _first_argmax(sims)
        return labels.squeeze(0) if squeeze else labels


def init_prototypes(c: int, d: int, seed: int, beta: float = 0.9) -> PrototypeStore:
    """i.i.d. Gaussian prototypes with per-component std 1/sqrt(d)."""
    if c < 1 or d < 1:
        raise ValidationError(f"need C >= 1 and d >= 1, got C={c}, d={d}")
    gen = torch.Generator().manual_seed(seed)
    protos = torch.randn(c, d, generator=gen) / math.sqrt(d)
    return PrototypeStore(protos, beta=beta)


def ema_update(store: PrototypeStore, class_id: int, class_token_out: Tensor) -> PrototypeStore:
    store.ema_update(class_id, class_token_out)
    return store


def pseudo_label(store: PrototypeStore, class_token_out: Tensor) -> Tensor:
    return store.pseudo_label(class_token_out)


def _first_argmax(values: Tensor) -> Tensor:
    c = values.shape[-1]
    is_max = values == values.amax(dim=-1, keepdim=True)
    idx = torch.arange(c, device=values.device)
    return torch.where(is_max, idx, c).amin(dim=-1)


def _degenerate_aware_cosine(tokens: Tensor, prototypes: Tensor) -> Tensor:
    token_norm = tokens.norm(dim=-1)
    proto_norm = prototypes.norm(dim=-1)
    degenerate = (token_norm[:, None] == 0) | (proto_norm[None, :] == 0)
    sims = _cosine_matrix(tokens, prototypes)
    if degenerate.any():
        warnings.warn("cosine similarity undefined for zero-norm vector; using -1")
        sims = torch.where(degenerate, torch.full_like(sims, -1.0), sims)
    return sims


def _cosine_matrix(tokens: Tensor, prototypes: Tensor) -> Tensor:
    t = tokens / tokens.norm(dim=-1, keepdim=True).clamp_min(COSINE_EPS)
    p = prototypes / prototypes.norm(dim=-1, keepdim=True).clamp_min(COSINE_EPS)
    return t @ p.T


def prototype_nll(tokens: Tensor, targets: Tensor, prototypes: Tensor, tau: float) -> Tensor:
    """-log softmax over cosine(token, p_c)/tau at the target slot, per row.

    tokens: (B, d); targets: (B,); no gradient flows into the prototypes.
    """
    if tau <= 0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    sims = _cosine_matrix(tokens, prototypes.detach()) / tau
    return -torch.log_softmax(sims, dim=-1).gather(1, targets.view(-1, 1)).squeeze(1)


def instance_loss(
    class_token_out: Tensor, store: PrototypeStore, target_class: int | Tensor, tau: float
) -> Tensor:
    """Instance-prototype contrastive loss; scalar for a (d,) token, per-sample
    vector for a (B, d) batch."""
    token = class_token_out
    squeeze = token.ndim == 1
    if squeeze:
        token = token.unsqueeze(0)
    targets = torch.as_tensor(target_class, dtype=torch.int64, device=token.device).reshape(-1)
    if squeeze and targets.numel() != 1:
        raise ValidationError("one target expected for a single token")
    if (targets < 0).any() or (targets >= store.num_classes).any():
        raise ValidationError(f"target class out of range [0, {store.num_classes})")
    losses = prototype_nll(token, targets.expand(token.shape[0]), store.prototypes, tau)
    return losses.squeeze(0) if squeeze else losses


def top_score_indices(scores: Tensor, epsilon: float) -> Tensor:
    """Indices of the ceil(epsilon*N) highest scores, ties toward lower index."""
    if not 0.0 < epsilon <= 1.0:
        raise ValidationError(f"epsilon must be in (0, 1], got {epsilon}")
    n = scores.shape[-1]
    if n < 1:
        raise ValidationError("need at least one score")
    k = min(n, max(1, math.ceil(epsilon * n - 1e-9)))
    order = torch.argsort(scores.detach(), dim=-1, descending=True, stable=True)
    return order[..., :k]


def shape_loss(
    shape_tokens_out: Tensor,
    adapter_scores: Tensor,
    store: PrototypeStore,
    target_class: int | Tensor,
    tau: float,
    epsilon: float,
) -> Tensor:
    """Average instance-style loss of the top-epsilon highest-scored tokens.

    shape_tokens_out: (N, d) or (B, N, d); adapter_scores aligned on the
    token axis. The score ordering only selects tokens; gradients flow
    through the selected tokens, not the scores.
    """
    tokens = shape_tokens_out
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = tokens.unsqueeze(0)
        adapter_scores = adapter_scores.unsqueeze(0)
    b, n, d = tokens.shape
    if adapter_scores.shape != (b, n):
        raise ValidationError(
            f"scores shape {tuple(adapter_scores.shape)} does not match tokens {(b, n)}"
        )
    targets = torch.as_tensor(target_class, dtype=torch.int64, device=tokens.device).reshape(-1)
    if targets.numel() == 1:
        targets = targets.expand(b)
    idx = top_score_indices(adapter_scores, epsilon)
    k = idx.shape[-1]
    selected = tokens.gather(1, idx.unsqueeze(-1).expand(b, k, d))
    flat_losses = prototype_nll(
        selected.reshape(b * k, d),
        targets.repeat_interleave(k),
        store.prototypes,
        tau,
    )
    losses = flat_losses.reshape(b, k).mean(dim=-1)
    return losses.squeeze(0) if squeeze else losses


def proto_loss(l_ins: Tensor | float, l_shape: Tensor | float, lam: float) -> Tensor | float:
    """(1 - lambda) * instance loss + lambda * shape loss."""
    if not 0.0 < lam < 1.0:
        raise ValidationError(f"lambda must be in (0, 1), got {lam}")
    return (1.0 - lam) * l_ins + lam * l_shape
