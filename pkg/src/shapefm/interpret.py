"""Attention-score export: which windows the model attends to, per scale."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .adapter import window_spans
from .encoder import predict_class
from .errors import ValidationError
from .model import ShapeModel


@dataclass
class ScaleAttention:
    """Window spans ([start, end], inclusive) and scores at one scale."""

    window: int
    stride: int
    spans: list[tuple[int, int]]
    scores: list[float]


@dataclass
class ExplainRecord:
    sample_index: int
    predicted_class: int | None
    true_class: int | None
    scales: list[ScaleAttention]

    def to_dict(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "predicted_class": self.predicted_class,
            "true_class": self.true_class,
            "scales": [
                {
                    "window": s.window,
                    "stride": s.stride,
                    "spans": [list(span) for span in s.spans],
                    "scores": s.scores,
                }
                for s in self.scales
            ],
        }


def build_explain_record(
    model: ShapeModel,
    values: np.ndarray,
    sample_index: int,
    true_class: int | None = None,
) -> ExplainRecord:
    """Per-scale window attention for one sample.

    Prepended class-token slots are excluded, so every score maps to a
    concrete time interval of width W_q.
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=dtype)
    if x.ndim != 1:
        raise ValidationError(f"expected a single 1-D series, got shape {tuple(x.shape)}")
    with torch.no_grad():
        adapter_out, encoded = model.encode(x)
        predicted = None
        if model.head is not None:
            predicted = int(predict_class(model.head(encoded.class_token_out)))

    scales = []
    t = x.shape[0]
    for q, (w, k) in enumerate(model.adapter.scales.windows):
        scores = adapter_out.per_scale_scores[q]
        if q > 0:
            scores = scores[1:]
        spans = window_spans(t, w, k)
        scales.append(
            ScaleAttention(
                window=w,
                stride=k,
                spans=[(int(s), int(e)) for s, e in spans.tolist()],
                scores=[float(v) for v in scores],
            )
        )
    return ExplainRecord(
        sample_index=sample_index,
        predicted_class=predicted,
        true_class=true_class,
        scales=scales,
    )


def score_heatmap(record: ExplainRecord, series_length: int) -> np.ndarray:
    """(num_scales, series_length) matrix; cell = max score of any window
    covering that time step at that scale, 0 where no window covers it."""
    heat = np.zeros((len(record.scales), series_length), dtype=np.float64)
    for row, scale in enumerate(record.scales):
        for (start, end), score in zip(scale.spans, scale.scores):
            seg = heat[row, start : end + 1]
            np.maximum(seg, score, out=seg)
    return heat
