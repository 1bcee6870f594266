"""Pre-norm transformer encoder over the class token and shape tokens."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import ValidationError


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 4
    heads: int = 8
    model_dim: int = 256
    ff_dim: int = 512
    dropout: float = 0.1
    max_positions: int = 128

    def __post_init__(self):
        if self.depth < 0:
            raise ValidationError(f"depth must be >= 0, got {self.depth}")
        if self.heads < 1 or self.model_dim % self.heads != 0:
            raise ValidationError(
                f"model_dim {self.model_dim} must be divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_positions < 1:
            raise ValidationError("max_positions must be >= 1")


@dataclass
class EncodedSequence:
    class_token_out: Tensor
    shape_tokens_out: Tensor


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) / self.head_dim**0.5, dim=-1)
        attn = self.drop(attn)
        mixed = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(mixed)


class FeedForward(nn.Module):
    def __init__(self, dim: int, ff_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, ff_dim)
        self.fc2 = nn.Linear(ff_dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(nn.functional.gelu(self.fc1(x)))


class EncoderBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.model_dim)
        self.attn = SelfAttention(cfg.model_dim, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.model_dim)
        self.ff = FeedForward(cfg.model_dim, cfg.ff_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.drop(self.attn(self.norm1(x)))
        x = x + self.drop(self.ff(self.norm2(x)))
        return x


class TokenEncoder(nn.Module):
    """Bidirectional encoder; learned positional embeddings are added to the
    shape tokens only, never to the class token."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.pos_embed = nn.Parameter(torch.empty(cfg.max_positions, cfg.model_dim))
        nn.init.normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.depth))

    def forward(self, class_token: Tensor, shape_tokens: Tensor) -> EncodedSequence:
        squeeze = class_token.ndim == 1
        if squeeze:
            class_token = class_token.unsqueeze(0)
            shape_tokens = shape_tokens.unsqueeze(0)
        d = self.cfg.model_dim
        if class_token.shape[-1] != d or shape_tokens.shape[-1] != d:
            raise ValidationError(
                f"token dim mismatch: expected {d}, got class {class_token.shape[-1]}, "
                f"shape {shape_tokens.shape[-1]}"
            )
        n = shape_tokens.shape[1]
        if not 1 <= n <= self.cfg.max_positions:
            raise ValidationError(
                f"got {n} shape tokens, supported range is [1, {self.cfg.max_positions}]"
            )
        seq = torch.cat([class_token.unsqueeze(1), shape_tokens + self.pos_embed[:n]], dim=1)
        for block in self.blocks:
            seq = block(seq)
        cls, toks = seq[:, 0], seq[:, 1:]
        if squeeze:
            cls, toks = cls.squeeze(0), toks.squeeze(0)
        return EncodedSequence(class_token_out=cls, shape_tokens_out=toks)


class ClassificationHead(nn.Module):
    """Single affine map from the refined class token to class logits."""

    def __init__(self, dim: int, num_classes: int):
        super().__init__()
        if num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {num_classes}")
        self.fc = nn.Linear(dim, num_classes)
        self.num_classes = num_classes

    def forward(self, class_token_out: Tensor) -> Tensor:
        return self.fc(class_token_out)


def predict_class(logits: Tensor) -> Tensor:
    """Argmax with ties broken toward the lowest class index."""
    c = logits.shape[-1]
    is_max = logits == logits.amax(dim=-1, keepdim=True)
    idx = torch.arange(c, device=logits.device)
    return torch.where(is_max, idx, c).amin(dim=-1)
