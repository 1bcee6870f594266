"""Pretraining (prototype + momentum contrastive) and supervised fine-tuning."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .checkpoint import ModelCheckpoint
from .data import Dataset, PretrainCorpus, resize_series
from .errors import ValidationError
from .model import ModelConfig, ShapeModel, momentum_step  # noqa: F401  (re-export)
from .prototypes import (
    ContrastiveConfig,
    PrototypeStore,
    init_prototypes,
    instance_loss,
    proto_loss,
    shape_loss,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    key_momentum: float = 0.99
    seed: int = 0
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    mu: float = 0.01
    label_ratio: float = 0.1
    prototype_beta: float = 0.9
    ema_from_pseudo_labels: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.key_momentum <= 1.0:
            raise ValidationError(f"key_momentum must be in [0, 1], got {self.key_momentum}")
        if self.mu < 0:
            raise ValidationError(f"mu must be >= 0, got {self.mu}")
        if not 0.0 <= self.label_ratio <= 1.0:
            raise ValidationError(f"label_ratio must be in [0, 1], got {self.label_ratio}")


@dataclass
class StepRecord:
    epoch: int
    step: int
    parts: dict[str, float]
    total: float


@dataclass
class TrainHistory:
    steps: list[StepRecord] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    epoch_parts: list[dict[str, float]] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def record(self, epoch: int, step: int, **parts: float) -> float:
        total = math.fsum(parts.values())
        self.steps.append(StepRecord(epoch=epoch, step=step, parts=dict(parts), total=total))
        return total

    def close_epoch(self, records: list[StepRecord], accuracy: float | None = None) -> float:
        mean_total = float(np.mean([r.total for r in records]))
        self.epoch_loss.append(mean_total)
        keys = records[0].parts.keys()
        self.epoch_parts.append(
            {k: float(np.mean([r.parts[k] for r in records])) for k in keys}
        )
        if accuracy is not None:
            self.epoch_accuracy.append(accuracy)
        return mean_total


def random_crop_view(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random crop of length uniform in [ceil(T/2), T], resized back to T."""
    x = np.asarray(x, dtype=np.float64)
    t = x.shape[0]
    if t < 4:
        raise ValidationError(f"series too short to crop, length {t}")
    crop_len = int(rng.integers(math.ceil(0.5 * t), t + 1))
    start = int(rng.integers(0, t - crop_len + 1))
    return resize_series(x[start : start + crop_len], t)


def self_sup_loss(queries: Tensor, keys: Tensor, tau: float) -> Tensor:
    """Symmetrized in-batch contrastive loss over cosine similarities.

    Positive for query i is key i; negatives are the other keys in the
    batch. The row-wise and column-wise cross-entropies of the similarity
    matrix are averaged, so swapping the roles of the two views leaves the
    value unchanged. Keys carry no gradient.
    """
    if tau <= 0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    if queries.ndim != 2 or keys.ndim != 2:
        raise ValidationError("queries and keys must be (batch, dim)")
    if queries.shape != keys.shape:
        raise ValidationError(
            f"queries {tuple(queries.shape)} and keys {tuple(keys.shape)} must match"
        )
    b = queries.shape[0]
    if b < 1:
        raise ValidationError("need at least one query/key pair")
    q = F.normalize(queries, dim=-1, eps=1e-8)
    k = F.normalize(keys.detach(), dim=-1, eps=1e-8)
    sims = q @ k.T / tau
    labels = torch.arange(b, device=sims.device)
    return 0.5 * (F.cross_entropy(sims, labels) + F.cross_entropy(sims.T, labels))


def _as_batch(rows: list[np.ndarray], dtype: torch.dtype) -> Tensor:
    return torch.as_tensor(np.stack(rows), dtype=dtype)


def _batch_targets(
    store: PrototypeStore,
    class_tokens: Tensor,
    labels: np.ndarray,
    mask: np.ndarray,
) -> tuple[Tensor, np.ndarray]:
    """Ground-truth global class where the mask allows, else pseudo-labels."""
    targets = torch.as_tensor(labels, dtype=torch.int64)
    unlabeled = ~mask
    if unlabeled.any():
        pseudo = store.pseudo_label(class_tokens[torch.as_tensor(unlabeled)])
        targets[torch.as_tensor(unlabeled)] = pseudo
    return targets, mask


def initial_checkpoint(
    model_config: ModelConfig,
    config: TrainConfig,
    num_prototype_classes: int,
    num_classes: int | None = None,
) -> ModelCheckpoint:
    """Seeded initialization only; what pretrain(epochs=0) returns."""
    torch.manual_seed(config.seed)
    model = ShapeModel(model_config, num_classes=num_classes)
    store = init_prototypes(
        num_prototype_classes, model_config.embed_dim, seed=config.seed,
        beta=config.prototype_beta,
    )
    return ModelCheckpoint.from_model(model, store, extra_config=_train_config_dict(config))


def _train_config_dict(config: TrainConfig) -> dict:
    return {
        "seed": config.seed,
        "train": {
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "key_momentum": config.key_momentum,
            "seed": config.seed,
            "tau": config.contrastive.tau,
            "epsilon": config.contrastive.epsilon,
            "lambda": config.contrastive.lam,
            "mu": config.mu,
            "label_ratio": config.label_ratio,
            "prototype_beta": config.prototype_beta,
            "ema_from_pseudo_labels": config.ema_from_pseudo_labels,
        },
    }


def _make_optimizer(params, config: TrainConfig, lr: float | None = None):
    opt = torch.optim.Adam(
        params,
        lr=lr if lr is not None else config.learning_rate,
        weight_decay=config.weight_decay,
    )
    sched = (
        torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=config.epochs)
        if config.epochs > 0
        else None
    )
    return opt, sched


def pretrain(
    corpus: PretrainCorpus,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
) -> tuple[ModelCheckpoint, TrainHistory]:
    """Joint prototype-contrastive and two-view momentum-contrastive pretraining.

    Per batch: two random-crop views per sample; the query branch encodes
    both views, the momentum branch provides the keys; the prototype losses
    are computed on the view-1 query outputs against the prototype state at
    batch start; EMA prototype updates are applied after the optimizer step,
    in sample order. Returns the final-epoch checkpoint and the loss history.
    """
    if len(corpus) == 0:
        raise ValidationError("empty corpus")
    if model_config is None:
        model_config = ModelConfig()

    torch.manual_seed(config.seed)
    model = ShapeModel(model_config)
    store = init_prototypes(
        corpus.num_global_classes, model_config.embed_dim, seed=config.seed,
        beta=config.prototype_beta,
    )
    optimizer, scheduler = _make_optimizer(model.trainable_parameters(), config)
    rng = np.random.default_rng(config.seed)
    dtype = next(model.parameters()).dtype

    cc = config.contrastive
    labels = np.array(
        [-1 if s.global_class is None else s.global_class for s in corpus.samples],
        dtype=np.int64,
    )
    history = TrainHistory()
    n = len(corpus)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_records: list[StepRecord] = []
        for step, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            view1, view2 = [], []
            for i in idx:
                x = corpus.samples[i].values
                view1.append(random_crop_view(x, rng))
                view2.append(random_crop_view(x, rng))
            x1 = _as_batch(view1, dtype)
            x2 = _as_batch(view2, dtype)

            adapter_out1, encoded1 = model.encode(x1)
            q1 = model.predictor(model.projector(encoded1.class_token_out))
            _, encoded2 = model.encode(x2)
            q2 = model.predictor(model.projector(encoded2.class_token_out))
            k1 = model.key_projection(x1)
            k2 = model.key_projection(x2)
            l_self = 0.5 * (self_sup_loss(q1, k2, cc.tau) + self_sup_loss(q2, k1, cc.tau))

            batch_mask = corpus.label_mask[idx]
            targets, _ = _batch_targets(
                store, encoded1.class_token_out.detach(), labels[idx], batch_mask
            )
            l_ins = instance_loss(encoded1.class_token_out, store, targets, cc.tau).mean()
            l_shape = shape_loss(
                encoded1.shape_tokens_out,
                adapter_out1.final_shape_tokens.scores,
                store,
                targets,
                cc.tau,
                cc.epsilon,
            ).mean()
            l_proto = proto_loss(l_ins, l_shape, cc.lam)

            total = l_proto + l_self
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            model.momentum_update(config.key_momentum)

            tokens = encoded1.class_token_out.detach()
            for pos in range(len(idx)):
                if batch_mask[pos] or config.ema_from_pseudo_labels:
                    store.ema_update(int(targets[pos]), tokens[pos])

            history.record(
                epoch, step, l_proto=float(l_proto.detach()), l_self=float(l_self.detach())
            )
            epoch_records.append(history.steps[-1])
        if scheduler is not None:
            scheduler.step()
        history.close_epoch(epoch_records)

    checkpoint = ModelCheckpoint.from_model(model, store, extra_config=_train_config_dict(config))
    return checkpoint, history


def finetune(
    checkpoint: ModelCheckpoint,
    dataset: Dataset,
    config: TrainConfig,
) -> tuple[ModelCheckpoint, TrainHistory]:
    """Supervised fine-tuning: cross-entropy plus mu-weighted shape loss.

    The classification head is re-initialized for the dataset's class count,
    the prototype store is re-initialized and EMA-updated from ground-truth
    labels, and all query-branch parameters are trained. The returned
    checkpoint holds the parameters of the epoch with the lowest mean
    training loss.
    """
    if len(dataset) == 0:
        raise ValidationError("empty dataset")
    labels = dataset.labels()
    if (labels < 0).any():
        raise ValidationError("fine-tuning requires a fully labeled dataset")
    if dataset.split != "train":
        raise ValidationError(f"fine-tuning expects a train split, got {dataset.split!r}")

    torch.manual_seed(config.seed)
    model, _ = checkpoint.build_model()
    model.attach_head(dataset.num_classes)
    store = init_prototypes(
        dataset.num_classes, model.config.embed_dim, seed=config.seed,
        beta=config.prototype_beta,
    )
    optimizer, scheduler = _make_optimizer(model.trainable_parameters(), config)
    rng = np.random.default_rng(config.seed)
    dtype = next(model.parameters()).dtype

    cc = config.contrastive
    values = dataset.values_matrix()
    n = len(dataset)
    history = TrainHistory()
    best = (math.inf, copy.deepcopy(model.state_dict()), store.clone())
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_records: list[StepRecord] = []
        correct = 0
        for step, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            x = torch.as_tensor(values[idx], dtype=dtype)
            y = torch.as_tensor(labels[idx], dtype=torch.int64)

            adapter_out, encoded = model.encode(x)
            logits = model.head(encoded.class_token_out)
            l_ce = F.cross_entropy(logits, y)
            l_shape = shape_loss(
                encoded.shape_tokens_out,
                adapter_out.final_shape_tokens.scores,
                store,
                y,
                cc.tau,
                cc.epsilon,
            ).mean()
            total = l_ce + config.mu * l_shape
            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            tokens = encoded.class_token_out.detach()
            for pos in range(len(idx)):
                store.ema_update(int(y[pos]), tokens[pos])

            correct += int((logits.detach().argmax(dim=-1) == y).sum())
            history.record(
                epoch,
                step,
                l_ce=float(l_ce.detach()),
                l_shape_weighted=float(config.mu * l_shape.detach()),
            )
            epoch_records.append(history.steps[-1])
        if scheduler is not None:
            scheduler.step()
        mean_total = history.close_epoch(epoch_records, accuracy=correct / n)
        if mean_total < best[0]:
            best = (mean_total, copy.deepcopy(model.state_dict()), store.clone())
            history.best_epoch = epoch

    model.load_state_dict(best[1])
    out = ModelCheckpoint.from_model(model, best[2], extra_config=_train_config_dict(config))
    return out, history
