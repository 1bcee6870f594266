"""Multi-scale shape tokenization with gated attention pooling.

A series is cut into sliding windows at several scales (coarse to fine).
Each window becomes a d-dimensional shape token built from the globally
standardized window, its first-order differential, and embeddings of the
window's local mean and std. Tokens at each scale pass through a shared
convolutional token mixer and are aggregated into a class token by a
sigmoid-gated attention pool; the class token of the previous (coarser)
scale is prepended to the next scale's token sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import ValidationError

SIGMA_FLOOR = 1e-8

DEFAULT_SCALES = ((64, 64), (32, 32), (16, 16), (8, 8), (4, 4))


@dataclass(frozen=True)
class ScaleConfig:
    """Window (length, stride) pairs ordered coarse to fine."""

    windows: tuple[tuple[int, int], ...] = DEFAULT_SCALES

    def __post_init__(self):
        if not self.windows:
            raise ValidationError("need at least one scale")
        prev_w = None
        for w, k in self.windows:
            if w < 1:
                raise ValidationError(f"window length must be >= 1, got {w}")
            if not 1 <= k <= w:
                raise ValidationError(f"stride must satisfy 1 <= stride <= window, got ({w}, {k})")
            if prev_w is not None and w >= prev_w:
                raise ValidationError("window lengths must be strictly decreasing")
            prev_w = w

    @property
    def num_scales(self) -> int:
        return len(self.windows)

    def token_counts(self, series_length: int) -> list[int]:
        return [num_windows(series_length, w, k) for w, k in self.windows]


def num_windows(series_length: int, window: int, stride: int) -> int:
    if window > series_length:
        raise ValidationError(f"window {window} exceeds series length {series_length}")
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    return (series_length - window) // stride + 1


def window_spans(series_length: int, window: int, stride: int) -> Tensor:
    """Inclusive [start, end] index pairs of each full window, shape (N, 2)."""
    n = num_windows(series_length, window, stride)
    starts = torch.arange(n, dtype=torch.int64) * stride
    return torch.stack([starts, starts + window - 1], dim=1)


def extract_subsequences(x: Tensor, window: int, stride: int) -> tuple[Tensor, Tensor]:
    """Slice sliding windows from the last axis; trailing partial windows are dropped.

    Returns (windows, spans): windows has shape (..., N, window), spans (N, 2).
    """
    spans = window_spans(x.shape[-1], window, stride)
    return x.unfold(-1, window, stride), spans


def first_order_diff(x: Tensor) -> Tensor:
    """[x2-x1, ..., xT-x(T-1), 0], same shape as x."""
    dx = torch.zeros_like(x)
    dx[..., :-1] = x[..., 1:] - x[..., :-1]
    return dx


def _series_stats(x: Tensor) -> tuple[Tensor, Tensor]:
    # population statistics over the full series, floored std
    mu = x.mean(dim=-1, keepdim=True)
    sigma = x.std(dim=-1, keepdim=True, unbiased=False).clamp_min(SIGMA_FLOOR)
    return mu, sigma


def window_feature_tensors(
    x: Tensor, window: int, stride: int
) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
    """Batched window features for x of shape (B, T).

    Returns (normalized windows (B,N,W), normalized diff windows (B,N,W),
    local means (B,N), local stds (B,N), spans (N,2)). Windows and their
    differentials are standardized with whole-series statistics, not
    per-window ones; local mean/std are computed on the raw window.
    """
    if x.ndim != 2:
        raise ValidationError(f"expected (batch, time), got shape {tuple(x.shape)}")
    mu, sigma = _series_stats(x)
    dx = first_order_diff(x)
    dmu, dsigma = _series_stats(dx)

    raw, spans = extract_subsequences(x, window, stride)
    diff, _ = extract_subsequences(dx, window, stride)
    norm = (raw - mu.unsqueeze(-1)) / sigma.unsqueeze(-1)
    norm_diff = (diff - dmu.unsqueeze(-1)) / dsigma.unsqueeze(-1)
    local_mean = raw.mean(dim=-1)
    local_std = raw.std(dim=-1, unbiased=False)
    return norm, norm_diff, local_mean, local_std, spans


@dataclass
class WindowFeatures:
    """Features of one window at one scale."""

    normalized_window: Tensor
    normalized_diff_window: Tensor
    local_mean: float
    local_std: float
    span: tuple[int, int]


def compute_window_features(x: Tensor, window: int, stride: int) -> list[WindowFeatures]:
    """Per-window features of a 1-D series (see window_feature_tensors)."""
    if x.ndim != 1:
        raise ValidationError(f"expected a 1-D series, got shape {tuple(x.shape)}")
    norm, norm_diff, local_mean, local_std, spans = window_feature_tensors(
        x.unsqueeze(0), window, stride
    )
    return [
        WindowFeatures(
            normalized_window=norm[0, i],
            normalized_diff_window=norm_diff[0, i],
            local_mean=float(local_mean[0, i]),
            local_std=float(local_std[0, i]),
            span=(int(spans[i, 0]), int(spans[i, 1])),
        )
        for i in range(spans.shape[0])
    ]


class NumericEmbedding(nn.Module):
    """Embed a scalar via clipped power-of-two features and an affine map.

    The pre-projection features are clip(v * 2^k, -1, 1) for
    k = min_exp..max_exp inclusive.
    """

    def __init__(self, dim: int, min_exp: int = -8, max_exp: int = 8):
        super().__init__()
        exponents = torch.arange(min_exp, max_exp + 1, dtype=torch.float32)
        self.register_buffer("scales", torch.pow(2.0, exponents), persistent=False)
        self.proj = nn.Linear(max_exp - min_exp + 1, dim)

    def features(self, v: Tensor) -> Tensor:
        if not torch.isfinite(v).all():
            raise ValidationError("numeric embedding input must be finite")
        return torch.clamp(v.unsqueeze(-1) * self.scales, -1.0, 1.0)

    def forward(self, v: Tensor) -> Tensor:
        return self.proj(self.features(v))


class ShapeTokenEmbedding(nn.Module):
    """Window -> d-vector: two 1-D convs (raw + differential, global average
    pooled over the window axis) concatenated with local mean/std embeddings
    and linearly projected. Pooling makes the module window-length agnostic,
    so one parameter set serves every scale."""

    def __init__(self, dim: int):
        super().__init__()
        self.conv_raw = nn.Conv1d(1, dim, kernel_size=3, padding=1)
        self.conv_diff = nn.Conv1d(1, dim, kernel_size=3, padding=1)
        self.numeric = NumericEmbedding(dim)
        self.proj = nn.Linear(4 * dim, dim)
        self.dim = dim

    def forward(
        self, norm: Tensor, norm_diff: Tensor, local_mean: Tensor, local_std: Tensor
    ) -> Tensor:
        b, n, w = norm.shape
        h = self.conv_raw(norm.reshape(b * n, 1, w)).mean(dim=-1).reshape(b, n, self.dim)
        g = self.conv_diff(norm_diff.reshape(b * n, 1, w)).mean(dim=-1).reshape(b, n, self.dim)
        e_mean = self.numeric(local_mean)
        e_std = self.numeric(local_std)
        return self.proj(torch.cat([h, g, e_mean, e_std], dim=-1))


class AttentionPool(nn.Module):
    """Gated attention pooling: alpha_i = sigmoid(w2' tanh(W1 z_i + b1) + b2),
    pooled = sum_i alpha_i z_i. Weights are not renormalized to a simplex."""

    def __init__(self, dim: int):
        super().__init__()
        hidden = max(1, dim // 2)
        self.hidden = nn.Linear(dim, hidden)
        self.gate = nn.Linear(hidden, 1)

    def forward(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        if tokens.ndim == 2:
            pooled, scores = self.forward(tokens.unsqueeze(0))
            return pooled.squeeze(0), scores.squeeze(0)
        if tokens.ndim != 3 or tokens.shape[1] < 1:
            raise ValidationError(
                f"expected (batch, tokens >= 1, dim), got shape {tuple(tokens.shape)}"
            )
        scores = torch.sigmoid(self.gate(torch.tanh(self.hidden(tokens)))).squeeze(-1)
        pooled = (scores.unsqueeze(-1) * tokens).sum(dim=1)
        return pooled, scores


class TokenMixer(nn.Module):
    """Three parallel 1-D convolutions along the token axis (kernel sizes
    3, 5, 9, same padding), concatenated, projected back to d, residual."""

    KERNELS = (3, 5, 9)

    def __init__(self, dim: int):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(dim, dim, kernel_size=k, padding=k // 2) for k in self.KERNELS
        )
        self.proj = nn.Linear(len(self.KERNELS) * dim, dim)

    def forward(self, tokens: Tensor) -> Tensor:
        t = tokens.transpose(1, 2)
        mixed = torch.cat([conv(t) for conv in self.convs], dim=1).transpose(1, 2)
        return tokens + self.proj(mixed)


@dataclass
class ShapeTokenBatch:
    """Shape tokens at one scale with their attention scores and time spans."""

    tokens: Tensor
    scores: Tensor
    scale_index: int
    spans: Tensor


@dataclass
class AdapterOutput:
    class_token: Tensor
    final_shape_tokens: ShapeTokenBatch
    per_scale_scores: list[Tensor]
    intermediate_class_tokens: list[Tensor]


class MultiScaleAdapter(nn.Module):
    """Coarse-to-fine fusion of per-scale shape tokens into a class token.

    One token embedding, one mixer, and one attention pool are shared by
    all scales. At every scale after the first, the previous class token
    is prepended to the token sequence before mixing and pooling, and it
    receives an attention score of its own.
    """

    def __init__(self, dim: int, scales: ScaleConfig | None = None):
        super().__init__()
        self.scales = scales if scales is not None else ScaleConfig()
        self.token_embed = ShapeTokenEmbedding(dim)
        self.mixer = TokenMixer(dim)
        self.pool = AttentionPool(dim)
        self.dim = dim

    def forward(self, x: Tensor) -> AdapterOutput:
        squeeze = x.ndim == 1
        if squeeze:
            x = x.unsqueeze(0)
        if x.ndim != 2:
            raise ValidationError(f"expected (batch, time) or (time,), got {tuple(x.shape)}")

        prev_class: Tensor | None = None
        per_scale_scores: list[Tensor] = []
        intermediates: list[Tensor] = []
        final_tokens = final_scores = final_spans = None
        last = self.scales.num_scales - 1
        for q, (w, k) in enumerate(self.scales.windows):
            norm, norm_diff, local_mean, local_std, spans = window_feature_tensors(x, w, k)
            tokens = self.token_embed(norm, norm_diff, local_mean, local_std)
            if prev_class is not None:
                tokens = torch.cat([prev_class.unsqueeze(1), tokens], dim=1)
            mixed = self.mixer(tokens)
            pooled, scores = self.pool(mixed)
            per_scale_scores.append(scores)
            intermediates.append(pooled)
            if q == last:
                offset = 0 if prev_class is None else 1
                final_tokens = mixed[:, offset:]
                final_scores = scores[:, offset:]
                final_spans = spans
            prev_class = pooled

        assert prev_class is not None and final_tokens is not None
        if squeeze:
            prev_class = prev_class.squeeze(0)
            final_tokens = final_tokens.squeeze(0)
            final_scores = final_scores.squeeze(0)
            per_scale_scores = [s.squeeze(0) for s in per_scale_scores]
            intermediates = [c.squeeze(0) for c in intermediates]
        return AdapterOutput(
            class_token=prev_class,
            final_shape_tokens=ShapeTokenBatch(
                tokens=final_tokens,
                scores=final_scores,
                scale_index=last,
                spans=final_spans,
            ),
            per_scale_scores=per_scale_scores,
            intermediate_class_tokens=intermediates,
        )
