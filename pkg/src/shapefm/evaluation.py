"""Frozen-feature evaluation and statistical comparison of classifiers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.stats import norm, rankdata
from sklearn.ensemble import RandomForestClassifier

from .checkpoint import ModelCheckpoint
from .data import Dataset
from .errors import ParseError, ValidationError

EXACT_WILCOXON_MAX_N = 20


@dataclass
class FeatureMatrix:
    """Class-token embeddings of one dataset under one frozen checkpoint."""

    rows: np.ndarray
    labels: np.ndarray
    source: str = ""


@dataclass
class EvalReport:
    per_dataset_accuracy: dict[str, dict[str, float]]
    avg_acc: dict[str, float] = field(default_factory=dict)
    avg_rank: dict[str, float] = field(default_factory=dict)
    p_values: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_dataset_accuracy": self.per_dataset_accuracy,
            "avg_acc": self.avg_acc,
            "avg_rank": self.avg_rank,
            "p_values": self.p_values,
        }


def extract_features(
    checkpoint,
    dataset: Dataset,
    batch_size: int = 256,
    source: str = "",
) -> FeatureMatrix:
    """Refined class-token embeddings under frozen query parameters.

    `checkpoint` may be a ModelCheckpoint (a fresh model is built from it)
    or an already-built ShapeModel.
    """
    if isinstance(checkpoint, ModelCheckpoint):
        model, _ = checkpoint.build_model()
    else:
        model = checkpoint
    model.eval()
    dtype = next(model.parameters()).dtype
    values = dataset.values_matrix()
    rows = []
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            x = torch.as_tensor(values[lo : lo + batch_size], dtype=dtype)
            _, encoded = model.encode(x)
            rows.append(encoded.class_token_out.cpu().numpy())
    return FeatureMatrix(
        rows=np.concatenate(rows, axis=0),
        labels=dataset.labels(),
        source=source or dataset.dataset_id,
    )


def zero_shot_eval(
    train_features: FeatureMatrix, test_features: FeatureMatrix, seed: int
) -> float:
    """Random-forest accuracy on frozen features (200 trees, sqrt features).

    Training rows are sorted canonically before fitting so the result does
    not depend on row order.
    """
    if train_features.rows.shape[1] != test_features.rows.shape[1]:
        raise ValidationError(
            f"feature dims differ: {train_features.rows.shape[1]} vs {test_features.rows.shape[1]}"
        )
    y = train_features.labels
    if (y < 0).any():
        raise ValidationError("train features must be labeled")
    if np.unique(y).size < 2:
        raise ValidationError("train set has a single class")
    keys = np.concatenate([train_features.rows, y[:, None].astype(np.float64)], axis=1)
    order = np.lexsort(keys.T[::-1])
    clf = RandomForestClassifier(
        n_estimators=200, max_features="sqrt", random_state=seed, n_jobs=1
    )
    clf.fit(train_features.rows[order], y[order])
    pred = clf.predict(test_features.rows)
    return float(np.mean(pred == test_features.labels))


def average_ranks(accuracy_table: dict[str, dict[str, float]]) -> dict[str, float]:
    """Mean accuracy rank per method (rank 1 = best; ties get average ranks)."""
    if not accuracy_table:
        raise ValidationError("empty accuracy table")
    methods = sorted({m for row in accuracy_table.values() for m in row})
    if len(methods) < 2:
        raise ValidationError("need at least 2 methods to rank")
    sums = {m: 0.0 for m in methods}
    for dataset, row in accuracy_table.items():
        missing = [m for m in methods if m not in row]
        if missing:
            raise ValidationError(f"dataset {dataset!r} missing methods {missing}")
        accs = np.array([row[m] for m in methods], dtype=np.float64)
        ranks = rankdata(-accs, method="average")
        for m, r in zip(methods, ranks):
            sums[m] += float(r)
    n = len(accuracy_table)
    return {m: sums[m] / n for m in methods}


def wilcoxon_signed_rank(a, b) -> float:
    """One-sided Wilcoxon signed-rank p-value for H1: A > B.

    Zero differences are dropped; absolute differences get average ranks on
    ties. Exact by sign-assignment enumeration for effective n <= 20, else
    a normal approximation with tie and continuity corrections. All-zero
    differences give p = 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"need equal-length 1-D inputs, got {a.shape} and {b.shape}")
    if a.size < 1:
        raise ValidationError("need at least one pair")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return 1.0
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_WILCOXON_MAX_N:
        return _exact_wilcoxon_p(ranks, w_plus)

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_counts**3 - tie_counts).sum()) / 48.0
    if var <= 0:
        return 1.0 if w_plus <= mean else 0.0
    z = (w_plus - mean - 0.5) / np.sqrt(var)
    return float(norm.sf(z))


def _exact_wilcoxon_p(ranks: np.ndarray, w_plus: float) -> float:
    """P(W+ >= observed) over the 2^n equiprobable sign assignments.

    Average ranks are multiples of 1/2, so doubling them gives integers and
    the null distribution of 2*W+ is a subset-sum count.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        counts[r:] = counts[r:] + counts[: total + 1 - r]
    threshold = int(np.rint(2.0 * w_plus))
    n = ranks.size
    return float(counts[threshold:].sum() / (2.0**n))


def read_accuracy_table(path: str | Path) -> dict[str, dict[str, float]]:
    """Read a `dataset,method,accuracy` CSV into a nested mapping."""
    path = Path(path)
    table: dict[str, dict[str, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["dataset", "method", "accuracy"]:
            raise ParseError(f"{path.name}: expected header 'dataset,method,accuracy', got {header}")
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"{path.name}:{rowno}: expected 3 columns, got {len(row)}")
            dataset, method, acc_str = (c.strip() for c in row)
            try:
                acc = float(acc_str)
            except ValueError:
                raise ParseError(f"{path.name}:{rowno}: bad accuracy {acc_str!r}") from None
            if not 0.0 <= acc <= 1.0:
                raise ParseError(f"{path.name}:{rowno}: accuracy {acc} outside [0, 1]")
            table.setdefault(dataset, {})[method] = acc
    if not table:
        raise ParseError(f"{path.name}: no data rows")
    return table


def write_accuracy_table(table: dict[str, dict[str, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "method", "accuracy"])
        for dataset in sorted(table):
            for method in sorted(table[dataset]):
                writer.writerow([dataset, method, table[dataset][method]])


def compare_methods(table: dict[str, dict[str, float]]) -> EvalReport:
    """Average accuracy, average rank, and pairwise one-sided Wilcoxon tests."""
    methods = sorted({m for row in table.values() for m in row})
    datasets = sorted(table)
    avg_acc = {}
    for m in methods:
        missing = [d for d in datasets if m not in table[d]]
        if missing:
            raise ValidationError(f"method {m!r} missing on datasets {missing}")
        avg_acc[m] = float(np.mean([table[d][m] for d in datasets]))
    avg_rank = average_ranks(table)
    p_values: dict[str, dict[str, float]] = {}
    for m_a in methods:
        for m_b in methods:
            if m_a == m_b:
                continue
            a = np.array([table[d][m_a] for d in datasets])
            b = np.array([table[d][m_b] for d in datasets])
            p_values.setdefault(m_a, {})[m_b] = wilcoxon_signed_rank(a, b)
    return EvalReport(
        per_dataset_accuracy={d: dict(table[d]) for d in datasets},
        avg_acc=avg_acc,
        avg_rank=avg_rank,
        p_values=p_values,
    )
