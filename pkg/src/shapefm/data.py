"""Dataset ingestion, resizing, corpus assembly, and synthetic data.

Input format: UCR-style TSV, one sample per line, class label first,
then the series values, all tab-separated. Series of any length >= 2
are accepted; every sample is linearly resized to a fixed length
(512 by default) at load time, after missing values (NaN tokens) have
been filled by linear interpolation between their finite neighbours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

TARGET_LENGTH = 512

TRAIN = "train"
TEST = "test"


@dataclass
class TimeSeriesSample:
    """One univariate series with optional label and provenance."""

    values: np.ndarray
    label: int | None = None
    dataset_id: str = ""
    global_class: int | None = None


@dataclass
class Dataset:
    """A list of equal-length samples belonging to one split."""

    samples: list[TimeSeriesSample]
    split: str
    num_classes: int
    # original label values in sorted order; index = dense class id
    label_values: tuple[float, ...] = ()
    dataset_id: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array(
            [-1 if s.label is None else s.label for s in self.samples], dtype=np.int64
        )

    def values_matrix(self) -> np.ndarray:
        return np.stack([s.values for s in self.samples])


@dataclass
class PretrainCorpus:
    """Union of train splits with disjoint global class ids and a label mask."""

    samples: list[TimeSeriesSample]
    num_global_classes: int
    label_mask: np.ndarray
    label_ratio: float

    def __len__(self) -> int:
        return len(self.samples)


def resize_series(x: np.ndarray, target: int) -> np.ndarray:
    """Piecewise-linear resample of a series onto `target` equispaced points.

    Endpoints are preserved exactly; resizing to the input length is the
    identity.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"expected a 1-D series, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValidationError(f"cannot resize a series of length {n} (need >= 2)")
    if target < 2:
        raise ValidationError(f"target length must be >= 2, got {target}")
    if n == target:
        return x.copy()
    positions = np.linspace(0.0, n - 1, num=target)
    return np.interp(positions, np.arange(n), x)


def _interpolate_missing(values: np.ndarray, where: str) -> np.ndarray:
    """Fill non-finite entries by linear interpolation; edge values are copied."""
    finite = np.isfinite(values)
    if finite.all():
        return values
    if not finite.any():
        raise ParseError(f"{where}: no finite values in row")
    idx = np.flatnonzero(finite)
    return np.interp(np.arange(values.shape[0]), idx, values[finite])


def _parse_tsv_line(line: str, where: str) -> tuple[float, np.ndarray]:
    fields = line.split("\t")
    if len(fields) < 3:
        raise ParseError(f"{where}: expected a label and at least 2 values, got {len(fields)} field(s)")
    try:
        label = float(fields[0])
    except ValueError:
        raise ParseError(f"{where}: bad label {fields[0]!r}") from None
    if math.isnan(label) or math.isinf(label):
        raise ParseError(f"{where}: non-finite label {fields[0]!r}")
    try:
        values = np.array([float(t) for t in fields[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{where}: bad value ({exc})") from None
    if np.isinf(values).any():
        raise ParseError(f"{where}: infinite value in row")
    return label, values


def load_tsv_dataset(
    path: str | Path,
    split: str = TRAIN,
    target_length: int = TARGET_LENGTH,
    label_values: tuple[float, ...] | None = None,
) -> Dataset:
    """Load a UCR-style TSV file into a Dataset of length-`target_length` samples.

    Labels are re-indexed densely from 0 in sorted order of the distinct
    label values found in the file. Pass `label_values` (taken from the
    matching train split) to reuse an existing mapping, e.g. for a test
    split that may not contain every class.
    """
    path = Path(path)
    if split not in (TRAIN, TEST):
        raise ValidationError(f"split must be {TRAIN!r} or {TEST!r}, got {split!r}")
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")

    dataset_id = path.stem
    for suffix in ("_TRAIN", "_TEST"):
        if dataset_id.endswith(suffix):
            dataset_id = dataset_id[: -len(suffix)]

    raw_labels: list[float] = []
    rows: list[np.ndarray] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip("\n").strip("\r")
            if not line.strip():
                continue
            label, values = _parse_tsv_line(line, f"{path.name}:{lineno}")
            values = _interpolate_missing(values, f"{path.name}:{lineno}")
            raw_labels.append(label)
            rows.append(resize_series(values, target_length))

    if not rows:
        raise ValidationError(f"{path.name}: empty dataset")

    if label_values is None:
        label_values = tuple(sorted(set(raw_labels)))
    if split == TRAIN and len(label_values) < 2:
        raise ValidationError(
            f"{path.name}: train split has {len(label_values)} distinct label(s), need >= 2"
        )
    mapping = {v: i for i, v in enumerate(label_values)}
    samples = []
    for label, values in zip(raw_labels, rows):
        if label not in mapping:
            raise ValidationError(f"{path.name}: label {label} not in label map {label_values}")
        samples.append(
            TimeSeriesSample(values=values, label=mapping[label], dataset_id=dataset_id)
        )
    return Dataset(
        samples=samples,
        split=split,
        num_classes=len(label_values),
        label_values=label_values,
        dataset_id=dataset_id,
    )


def channel_independent_split(
    values: np.ndarray,
    label: int | None = None,
    dataset_id: str = "",
) -> list[TimeSeriesSample]:
    """Decompose a (channels, length) multivariate series into univariate samples.

    Every output sample carries the parent's label and dataset id.
    """
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (ValueError, TypeError):
        raise ValidationError("channels must form a rectangular array") from None
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValidationError(f"expected a (channels, length) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"empty series, shape {arr.shape}")
    return [
        TimeSeriesSample(values=row.copy(), label=label, dataset_id=dataset_id)
        for row in arr
    ]


def _ceil_fraction(ratio: float, n: int) -> int:
    """ceil(ratio*n) with a guard against float round-up of exact products."""
    if ratio <= 0.0:
        return 0
    k = math.ceil(ratio * n - 1e-9)
    return min(n, max(1, k))


def build_pretrain_corpus(
    datasets: list[Dataset],
    label_ratio: float,
    seed: int,
) -> PretrainCorpus:
    """Merge train splits into one corpus with disjoint global class ids.

    Global class ids are assigned by cumulative offset in input order.
    The label mask is drawn per dataset by stratified per-class sampling
    with ceil rounding, so every class keeps at least one labeled sample
    whenever label_ratio > 0.
    """
    if not 0.0 <= label_ratio <= 1.0:
        raise ValidationError(f"label_ratio must be in [0, 1], got {label_ratio}")
    if not datasets:
        raise ValidationError("need at least one dataset")

    rng = np.random.default_rng(seed)
    samples: list[TimeSeriesSample] = []
    mask_parts: list[np.ndarray] = []
    offset = 0
    for ds in datasets:
        if ds.split != TRAIN:
            raise ValidationError(f"corpus datasets must be train splits, got {ds.split!r}")
        labels = ds.labels()
        if (labels < 0).any():
            raise ValidationError(f"dataset {ds.dataset_id!r} has unlabeled samples")
        mask = np.zeros(len(ds), dtype=bool)
        for c in range(ds.num_classes):
            class_idx = np.flatnonzero(labels == c)
            if class_idx.size == 0:
                continue
            k = _ceil_fraction(label_ratio, class_idx.size)
            if k > 0:
                chosen = rng.choice(class_idx, size=k, replace=False)
                mask[chosen] = True
        for s in ds.samples:
            samples.append(
                TimeSeriesSample(
                    values=s.values,
                    label=s.label,
                    dataset_id=s.dataset_id,
                    global_class=s.label + offset,
                )
            )
        mask_parts.append(mask)
        offset += ds.num_classes

    return PretrainCorpus(
        samples=samples,
        num_global_classes=offset,
        label_mask=np.concatenate(mask_parts),
        label_ratio=label_ratio,
    )


def generate_motif_dataset(
    n_per_class: int,
    motif_interval: tuple[int, int],
    noise_std: float,
    seed: int,
    amplitude: float = 2.0,
    split: str = TRAIN,
    dataset_id: str = "motif",
    target_length: int = TARGET_LENGTH,
) -> Dataset:
    """Two-class synthetic dataset: Gaussian noise plus a localized bump.

    Class 0 gets an upward bump on the half-open interval
    [motif_interval[0], motif_interval[1]); class 1 gets the same bump
    downward. The bump is a half-sine, strictly nonzero on every index
    of the interval. Deterministic for a fixed seed.
    """
    if n_per_class < 1:
        raise ValidationError(f"n_per_class must be >= 1, got {n_per_class}")
    start, stop = motif_interval
    if not (0 <= start < stop <= target_length):
        raise ValidationError(
            f"motif interval [{start}, {stop}) must be non-empty and lie within [0, {target_length})"
        )
    if noise_std < 0:
        raise ValidationError(f"noise_std must be >= 0, got {noise_std}")

    width = stop - start
    bump = amplitude * np.sin(np.pi * (np.arange(width) + 0.5) / width)
    rng = np.random.default_rng(seed)
    samples = []
    for label, sign in ((0, 1.0), (1, -1.0)):
        for _ in range(n_per_class):
            values = rng.normal(0.0, noise_std, size=target_length) if noise_std > 0 else np.zeros(target_length)
            values[start:stop] += sign * bump
            samples.append(TimeSeriesSample(values=values, label=label, dataset_id=dataset_id))
    return Dataset(
        samples=samples,
        split=split,
        num_classes=2,
        label_values=(0.0, 1.0),
        dataset_id=dataset_id,
    )
