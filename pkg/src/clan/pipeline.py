"""Flow CSV ingestion, min-max scaling, stratified splitting and batching."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass
class FlowDataset:
    features: np.ndarray  # (N, f) float32
    labels: np.ndarray  # (N,) int64, 0 = benign
    class_names: list
    feature_names: list
    dropped_rows: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            self.features = self.features.reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise DataError("feature and label counts differ")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("label index outside the class table")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        if index.size == 0:
            index = index.astype(np.intp)
        return FlowDataset(self.features[index], self.labels[index],
                           list(self.class_names), list(self.feature_names))

    def with_features(self, features):
        return FlowDataset(features, self.labels.copy(), list(self.class_names),
                           list(self.feature_names))

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


def load_csv(path, label_column="label", benign_label_value="BENIGN", drop_columns=(),
             class_names=None):
    """Read a flow CSV into a ``FlowDataset``.

    Labels are re-indexed with the benign value as class 0 and the others
    in order of first appearance, unless a fixed ``class_names`` table is
    passed, in which case every label must already appear in it. Columns with no numeric content at all
    (addresses, flow ids, timestamps) are skipped with a warning; rows
    holding a missing or non-finite feature are dropped and their 1-based
    data-row numbers listed in ``dataset.dropped_rows``.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: empty file") from None
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    frame.columns = [c.strip() for c in frame.columns]
    if label_column not in frame.columns:
        raise DataError(f"{path}: label column {label_column!r} not found")
    if frame.empty:
        raise DataError(f"{path}: no data rows")

    raw_labels = frame[label_column].str.strip()
    present = pd.unique(raw_labels)
    if benign_label_value not in set(present):
        raise DataError(f"{path}: benign label value {benign_label_value!r} never occurs in {label_column!r}")
    if class_names is None:
        class_names = [benign_label_value] + [v for v in present if v != benign_label_value]
    else:
        class_names = list(class_names)
        if class_names[0] != benign_label_value:
            raise DataError(f"class table must start with the benign value {benign_label_value!r}")
        unknown = [v for v in present if v not in class_names]
        if unknown:
            raise DataError(f"{path}: label value {unknown[0]!r} not in the class table")

    feature_cols = [c for c in frame.columns if c != label_column and c not in set(drop_columns)]
    numeric = {}
    for col in feature_cols:
        values = pd.to_numeric(frame[col], errors="coerce")
        if values.isna().all():
            log.warning("skipping non-numeric column %r", col)
            continue
        numeric[col] = values.to_numpy(dtype=np.float64)
    if not numeric:
        raise DataError(f"{path}: no numeric feature columns")
    features = np.column_stack(list(numeric.values()))
    ok = np.isfinite(features).all(axis=1) & (np.abs(features) <= np.finfo(np.float32).max).all(axis=1)
    dropped = (np.flatnonzero(~ok) + 1).tolist()
    if dropped:
        log.warning("dropped %d row(s) with missing or non-numeric features", len(dropped))
    if not ok.any():
        raise DataError(f"{path}: zero usable rows")

    index = {name: i for i, name in enumerate(class_names)}
    labels = raw_labels.map(index).to_numpy()[ok]
    # a class whose every row was rejected keeps its slot so indices stay stable
    return FlowDataset(features[ok].astype(np.float32), labels.astype(np.int64), class_names,
                       list(numeric.keys()), dropped)


def align_classes(reference, other):
    """Re-index ``other`` into a class table extending ``reference``'s.

    Returns ``(reference, other)`` sharing one table: the reference names
    first, then names only ``other`` has, in its order.
    """
    names = list(reference.class_names)
    names += [n for n in other.class_names if n not in names]
    remap = np.array([names.index(n) for n in other.class_names], dtype=np.int64)
    ref = FlowDataset(reference.features, reference.labels, names, reference.feature_names)
    oth = FlowDataset(other.features, remap[other.labels], names, other.feature_names)
    return ref, oth


def write_csv(dataset, path, label_column="label"):
    frame = pd.DataFrame(dataset.features, columns=dataset.feature_names)
    frame[label_column] = np.asarray(dataset.class_names, dtype=object)[dataset.labels]
    frame.to_csv(path, index=False, float_format="%.9g")


@dataclass(frozen=True)
class Scaler:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if np.any(self.maximum < self.minimum):
            raise DataError("scaler maximum below minimum")


def fit_scaler(train_features):
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("cannot fit a scaler on an empty feature set")
    return Scaler(x.min(axis=0), x.max(axis=0))


def apply_scaler(scaler, features):
    """Map the fitted range to [-1, 1] per feature; constant features map to 0.

    Values outside the fitted range extrapolate linearly.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != scaler.minimum.shape[0]:
        raise DataError(f"scaler fitted on {scaler.minimum.shape[0]} features, got {x.shape[-1]}")
    span = scaler.maximum - scaler.minimum
    constant = span == 0
    safe = np.where(constant, 1.0, span)
    out = 2.0 * (x - scaler.minimum) / safe - 1.0
    out = np.where(constant, 0.0, out)
    return out.astype(np.float32)


def stratified_split(dataset, train_fraction=0.5, holdout_class_names=(), seed=0):
    """Per-class seeded split; holdout classes go entirely to the test side.

    Each non-holdout class sends ``floor(train_fraction * count)`` rows to
    train.
    """
    unknown = [n for n in holdout_class_names if n not in dataset.class_names]
    if unknown:
        raise DataError(f"unknown holdout class name(s): {', '.join(map(repr, unknown))}")
    holdout = {dataset.class_names.index(n) for n in holdout_class_names}
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed % 2**64, 0x5917])))
    train_idx, test_idx = [], []
    for c in range(dataset.n_classes):
        rows = np.flatnonzero(dataset.labels == c)
        if c in holdout:
            test_idx.append(rows)
            continue
        rows = rng.permutation(rows)
        k = int(np.floor(train_fraction * len(rows)))
        train_idx.append(rows[:k])
        test_idx.append(rows[k:])
    train_idx = np.sort(np.concatenate(train_idx)) if train_idx else np.empty(0, dtype=np.int64)
    test_idx = np.sort(np.concatenate(test_idx))
    return dataset.subset(train_idx), dataset.subset(test_idx)


def benign_only(dataset):
    return dataset.subset(np.flatnonzero(dataset.labels == 0))


def batch_indices(n, batch_size, seed, epoch):
    """Row-index batches of a seeded permutation for ``(seed, epoch)``."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed % 2**64, epoch])))
    order = rng.permutation(n)
    return [order[start:start + batch_size] for start in range(0, n, batch_size)]


def batch_iter(dataset, batch_size, seed, epoch):
    """Yield feature batches in a seeded order for ``(seed, epoch)``; the last may be short."""
    features = dataset.features if isinstance(dataset, FlowDataset) else np.asarray(dataset)
    for idx in batch_indices(len(features), batch_size, seed, epoch):
        yield features[idx]
