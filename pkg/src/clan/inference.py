"""Centroid caching and constant-time probabilistic scoring.

A test row is scored by one distance to the cached benign centroid,
``P(benign | x) = exp(-d) / Z``, and labelled malicious unless that
probability exceeds 0.5. ``knn_baseline_score`` is the exhaustive
nearest-neighbour scorer used by augmentation-as-positive methods, kept
for the complexity comparison.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, CorruptCheckpointError, DataError
from .model import _Reader, _write_tensor, forward, read_header, write_header
from .numerics import METRICS, min_distance, pairwise_distance
from .pipeline import FlowDataset, Scaler

_CHUNK = 8192


@dataclass
class BenignCentroid:
    mu0: np.ndarray
    metric: str
    partition_constant: float = 1.0
    scaler: Scaler | None = None
    quantile: float = 0.99

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ContractError(f"unknown metric tag {self.metric!r}")
        if not np.all(np.isfinite(self.mu0)):
            raise DataError("centroid has non-finite entries")
        if not self.partition_constant > 0:
            raise DataError("partition constant must be positive")


@dataclass(frozen=True)
class ScoreRecord:
    distance: float
    prob_benign: float
    predicted_label: int


@dataclass
class ScoreBatch:
    distance: np.ndarray
    prob_benign: np.ndarray
    predicted_label: np.ndarray

    def __len__(self):
        return len(self.distance)

    def __getitem__(self, i):
        return ScoreRecord(float(self.distance[i]), float(self.prob_benign[i]),
                           int(self.predicted_label[i]))


def encode(params, features, chunk=_CHUNK):
    """Latents for many rows, encoded in chunks to bound memory."""
    x = np.asarray(features)
    if x.ndim == 1:
        x = x[None, :]
    if len(x) == 0:
        return np.empty((0, params.weights[-1].shape[1]), dtype=params.dtype)
    return np.concatenate([forward(params, x[i:i + chunk])[0] for i in range(0, len(x), chunk)])


def _features(data):
    return data.features if isinstance(data, FlowDataset) else np.asarray(data)


def centroid_of_latents(latents, metric):
    z = np.asarray(latents, dtype=np.float64)
    if metric == "cosine":
        norms = np.linalg.norm(z, axis=1)
        if np.any(norms == 0):
            raise DataError("zero-norm latent; cosine centroid undefined")
        mean = (z / norms[:, None]).mean(axis=0)
        return (mean / np.linalg.norm(mean)).astype(np.float32)
    return z.mean(axis=0).astype(np.float32)


def calibrate_partition_constant(distances, quantile=0.99):
    """Z such that the given quantile of benign distances maps to probability 0.5."""
    d_q = float(np.quantile(np.asarray(distances, dtype=np.float64), quantile))
    return float(np.exp(-d_q) / 0.5)


def compute_centroid(params, benign_train, metric="cosine", quantile=0.99,
                     partition_constant=None, scaler=None):
    """Cache the benign latent centroid and a calibrated partition constant.

    ``benign_train`` is a scaled ``FlowDataset`` or feature matrix. Under
    the squared-Euclidean metric the centroid is the arithmetic mean of
    latents; under cosine it is the renormalised mean of unit latents.
    """
    x = _features(benign_train)
    if len(x) == 0:
        raise DataError("cannot compute a centroid from an empty benign set")
    latents = encode(params, x)
    mu0 = centroid_of_latents(latents, metric)
    if partition_constant is None:
        d = pairwise_distance(latents, mu0[None, :].astype(latents.dtype), metric)[:, 0]
        partition_constant = calibrate_partition_constant(d, quantile)
    return BenignCentroid(mu0, metric, float(partition_constant), scaler, quantile)


def classify(prob_benign):
    """0 (benign) iff the probability exceeds 0.5, else 1."""
    p = np.asarray(prob_benign)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    out = np.where(p > 0.5, 0, 1)
    return int(out) if out.ndim == 0 else out


def _check_metric(expected, metric):
    if metric is not None and metric != expected:
        raise ContractError(f"metric mismatch: centroid uses {expected!r}, caller requested {metric!r}")


def score(params, centroid, x, metric=None):
    """Score one row (returns ``ScoreRecord``) or a batch (returns ``ScoreBatch``)."""
    _check_metric(centroid.metric, metric)
    arr = np.asarray(_features(x))
    single = arr.ndim == 1
    latents = encode(params, arr)
    mu = centroid.mu0[None, :].astype(latents.dtype)
    d = pairwise_distance(latents, mu, centroid.metric)[:, 0].astype(np.float64)
    prob = np.exp(-d) / centroid.partition_constant
    batch = ScoreBatch(d, prob, classify(prob).reshape(-1))
    return batch[0] if single else batch


def knn_baseline_score(params, train_latents, x, metric="cosine"):
    """Distance from each row's latent to its nearest training latent (exhaustive scan)."""
    base = np.asarray(train_latents)
    if base.ndim != 2 or len(base) == 0:
        raise DataError("knn baseline needs a non-empty latent matrix")
    arr = np.asarray(_features(x))
    single = arr.ndim == 1
    latents = encode(params, arr)
    d = min_distance(latents, base.astype(latents.dtype, copy=False), metric)
    return float(d[0]) if single else d


# Centroid cache layout (little-endian), sharing the checkpoint header:
#   16-byte header: magic b"CLANCENT", u16 version, u16 flags (bit 0: scaler), u32 0
#   u32 metric tag (0 squared_euclidean, 1 cosine), f64 Z, f64 calibration quantile
#   tensor mu0 (1 x d_head); if flagged, tensors scaler min and max (1 x f each)
CENTROID_MAGIC = b"CLANCENT"
_CENT = struct.Struct("<Idd")


def save_centroid(centroid, path):
    flags = 1 if centroid.scaler is not None else 0
    with open(path, "wb") as fh:
        write_header(fh, CENTROID_MAGIC, flags)
        fh.write(_CENT.pack(METRICS.index(centroid.metric), centroid.partition_constant,
                            centroid.quantile))
        _write_tensor(fh, centroid.mu0)
        if centroid.scaler is not None:
            _write_tensor(fh, centroid.scaler.minimum)
            _write_tensor(fh, centroid.scaler.maximum)


def load_centroid(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    flags = read_header(reader, CENTROID_MAGIC)
    tag, z, quantile = reader.unpack(_CENT)
    if tag >= len(METRICS):
        raise CorruptCheckpointError(f"{path}: unknown metric tag {tag}")
    mu0 = reader.tensor()[0]
    scaler = None
    if flags & 1:
        lo, hi = reader.tensor()[0], reader.tensor()[0]
        scaler = Scaler(lo.astype(np.float64), hi.astype(np.float64))
    if reader.pos != len(reader.data):
        raise CorruptCheckpointError(f"{path}: trailing bytes")
    return BenignCentroid(mu0, METRICS[tag], z, scaler, quantile)
