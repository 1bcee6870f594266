"""scikit-learn style wrappers so the model composes with the wider ecosystem.

ShapeTokenClassifier fine-tunes the model on (X, y) arrays and predicts
class labels; ShapeTokenFeaturizer exposes frozen-feature extraction as a
transformer, so e.g. `make_pipeline(ShapeTokenFeaturizer(...), RandomForestClassifier())`
reproduces the zero-shot evaluation protocol.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .checkpoint import ModelCheckpoint
from .data import Dataset, TimeSeriesSample, resize_series
from .errors import ValidationError
from .evaluation import extract_features
from .model import ModelConfig
from .prototypes import ContrastiveConfig
from .training import TrainConfig, finetune, initial_checkpoint


def _rows_to_dataset(x: np.ndarray, y: np.ndarray | None, target_length: int, split: str) -> Dataset:
    samples = []
    for i in range(x.shape[0]):
        row = resize_series(x[i], target_length)
        label = None if y is None else int(y[i])
        samples.append(TimeSeriesSample(values=row, label=label, dataset_id="array"))
    n_classes = 0 if y is None else int(np.unique(y).size)
    return Dataset(samples=samples, split=split, num_classes=n_classes, dataset_id="array")


def _resolve_checkpoint(checkpoint) -> ModelCheckpoint | None:
    if checkpoint is None or isinstance(checkpoint, ModelCheckpoint):
        return checkpoint
    if isinstance(checkpoint, (str, Path)):
        return ModelCheckpoint.load(checkpoint)
    raise ValidationError(f"unsupported checkpoint type {type(checkpoint)!r}")


class _ConfigMixin:
    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            target_length=self.target_length,
            embed_dim=self.embed_dim,
            scales=tuple(tuple(p) for p in self.scales),
            depth=self.depth,
            heads=self.heads,
            ff_dim=self.ff_dim,
            dropout=self.dropout,
        )

    def _train_config(self, epochs: int) -> TrainConfig:
        return TrainConfig(
            epochs=epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
            contrastive=ContrastiveConfig(tau=self.tau, epsilon=self.epsilon, lam=self.lam),
            mu=self.mu,
        )


class ShapeTokenClassifier(_ConfigMixin, ClassifierMixin, BaseEstimator):
    """Fine-tune the shape-token model on arrays and predict class labels.

    Parameters mirror the training configuration; `checkpoint` may be None
    (train from a fresh seeded initialization), a checkpoint directory path,
    or a ModelCheckpoint.
    """

    def __init__(
        self,
        checkpoint=None,
        target_length: int = 512,
        embed_dim: int = 64,
        scales: tuple = ((64, 64), (32, 32), (16, 16), (8, 8), (4, 4)),
        depth: int = 2,
        heads: int = 4,
        ff_dim: int = 128,
        dropout: float = 0.1,
        epochs: int = 50,
        batch_size: int = 32,
        learning_rate: float = 1e-4,
        weight_decay: float = 1e-5,
        mu: float = 0.01,
        tau: float = 0.2,
        epsilon: float = 0.6,
        lam: float = 0.01,
        seed: int = 0,
    ):
        self.checkpoint = checkpoint
        self.target_length = target_length
        self.embed_dim = embed_dim
        self.scales = scales
        self.depth = depth
        self.heads = heads
        self.ff_dim = ff_dim
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.mu = mu
        self.tau = tau
        self.epsilon = epsilon
        self.lam = lam
        self.seed = seed

    def fit(self, X, y):
        X, y = validate_data(self, X, y, ensure_min_features=2)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValidationError("need at least 2 classes")
        cfg = self._train_config(self.epochs)
        base = _resolve_checkpoint(self.checkpoint)
        if base is None:
            base = initial_checkpoint(
                self._model_config(), cfg, num_prototype_classes=self.classes_.size
            )
        dataset = _rows_to_dataset(X, y_idx, self.target_length, split="train")
        self.checkpoint_, self.history_ = finetune(base, dataset, cfg)
        model, _ = self.checkpoint_.build_model()
        model.eval()
        self._model = model
        return self

    def _forward(self, X) -> torch.Tensor:
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        rows = np.stack([resize_series(row, self.target_length) for row in X])
        dtype = next(self._model.parameters()).dtype
        with torch.no_grad():
            return self._model.logits(torch.as_tensor(rows, dtype=dtype))

    def decision_function(self, X) -> np.ndarray:
        return self._forward(X).numpy()

    def predict_proba(self, X) -> np.ndarray:
        return torch.softmax(self._forward(X), dim=-1).numpy()

    def predict(self, X) -> np.ndarray:
        logits = self._forward(X).numpy()
        return self.classes_[np.argmax(logits, axis=-1)]

    def transform(self, X) -> np.ndarray:
        """Frozen class-token embeddings of the fitted model."""
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        dataset = _rows_to_dataset(X, None, self.target_length, split="test")
        return extract_features(self._model, dataset).rows


class ShapeTokenFeaturizer(_ConfigMixin, TransformerMixin, BaseEstimator):
    """Frozen-feature extractor over a (possibly pretrained) checkpoint."""

    def __init__(
        self,
        checkpoint=None,
        target_length: int = 512,
        embed_dim: int = 64,
        scales: tuple = ((64, 64), (32, 32), (16, 16), (8, 8), (4, 4)),
        depth: int = 2,
        heads: int = 4,
        ff_dim: int = 128,
        dropout: float = 0.1,
        batch_size: int = 256,
        learning_rate: float = 1e-3,
        weight_decay: float = 1e-5,
        mu: float = 0.01,
        tau: float = 0.2,
        epsilon: float = 0.6,
        lam: float = 0.01,
        seed: int = 0,
    ):
        self.checkpoint = checkpoint
        self.target_length = target_length
        self.embed_dim = embed_dim
        self.scales = scales
        self.depth = depth
        self.heads = heads
        self.ff_dim = ff_dim
        self.dropout = dropout
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.mu = mu
        self.tau = tau
        self.epsilon = epsilon
        self.lam = lam
        self.seed = seed

    def fit(self, X, y=None):
        X = validate_data(self, X, ensure_min_features=2)
        base = _resolve_checkpoint(self.checkpoint)
        if base is None:
            base = initial_checkpoint(
                self._model_config(), self._train_config(epochs=0), num_prototype_classes=1
            )
        model, _ = base.build_model()
        model.eval()
        self._model = model
        self.checkpoint_ = base
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        rows = np.stack([resize_series(row, self.target_length) for row in X])
        dataset = _rows_to_dataset(rows, None, self.target_length, split="test")
        return extract_features(self._model, dataset, batch_size=self.batch_size).rows
