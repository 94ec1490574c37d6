"""Benign-only contrastive pretraining and low-shot supervised fine-tuning."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .augmentation import augment
from .errors import ConfigError, ContractError, DataError, DivergenceError
from .loss import LOSSES
from .model import backward, forward, init
from .numerics import AdamWState, ScheduleConfig, adamw_step, lr_at
from .pipeline import FlowDataset, batch_indices, batch_iter

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    base_lr: float = 1e-3
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.1
    seed: int = 0
    loss: str = "clan"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.base_lr <= 0 or self.weight_decay < 0:
            raise ConfigError("need base_lr > 0 and weight_decay >= 0")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1]")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {sorted(LOSSES)}, got {self.loss!r}")


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 100
    lr: float = 1e-6
    batch_size: int = 64
    samples_per_class: int = 8
    weight_decay: float = 1e-2
    seeds: tuple = tuple(range(10))

    def __post_init__(self):
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("need epochs >= 0, batch_size >= 1 and lr > 0")


@dataclass
class ClassifierHead:
    weight: np.ndarray  # (d_head, n_classes)
    bias: np.ndarray  # (n_classes,)

    @classmethod
    def zeros(cls, latent_width, n_classes):
        return cls(np.zeros((latent_width, n_classes), dtype=np.float32),
                   np.zeros(n_classes, dtype=np.float32))

    @property
    def n_classes(self):
        return self.weight.shape[1]

    def copy(self):
        return ClassifierHead(self.weight.copy(), self.bias.copy())

    def logits(self, latents):
        return np.asarray(latents, dtype=np.float64) @ self.weight + self.bias


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float


def pretrain(benign_train, mlp_config, train_config, augment_config, loss_config):
    """Train an encoder on benign rows with the configured contrastive loss.

    Each batch is augmented, both views are encoded, and the loss gradient
    is backpropagated through both encoder passes before one AdamW step at
    the scheduled learning rate. Returns ``(params, history)``.
    """
    features = benign_train.features if isinstance(benign_train, FlowDataset) else np.asarray(benign_train)
    if isinstance(benign_train, FlowDataset) and np.any(benign_train.labels != 0):
        raise ContractError("pretraining data must be benign-only (all labels 0)")
    if len(features) == 0:
        raise DataError("no benign rows to pretrain on")
    if features.shape[1] != mlp_config.input_width:
        raise DataError(f"data has {features.shape[1]} features, encoder expects {mlp_config.input_width}")

    params = init(mlp_config)
    history = []
    if train_config.epochs == 0:
        return params, history

    loss_fn = LOSSES[train_config.loss]
    n_batches = math.ceil(len(features) / train_config.batch_size)
    total = train_config.epochs * n_batches
    schedule = ScheduleConfig.from_fraction(train_config.base_lr, total, train_config.warmup_fraction)
    arrays = params.arrays()
    state = AdamWState.zeros_like(arrays, weight_decay=train_config.weight_decay)
    # overflow shows up as a non-finite loss or parameter and is raised below
    with np.errstate(over="ignore", invalid="ignore"):
        history = _pretrain_epochs(params, arrays, state, features, schedule, loss_fn,
                                   n_batches, train_config, augment_config, loss_config)
    return params, history


def _pretrain_epochs(params, arrays, state, features, schedule, loss_fn, n_batches,
                     train_config, augment_config, loss_config):
    history = []
    step = 0
    lr = 0.0
    for epoch in range(train_config.epochs):
        total_loss = 0.0
        for b, batch in enumerate(batch_iter(features, train_config.batch_size, train_config.seed, epoch)):
            view = augment(batch, augment_config, stream_position=step)
            z, cache = forward(params, batch)
            zv, cache_v = forward(params, view)
            value, gz, gzv = loss_fn(z, zv, loss_config)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            g1 = backward(params, cache, gz).arrays()
            g2 = backward(params, cache_v, gzv).arrays()
            lr = lr_at(schedule, step + 1)
            adamw_step(arrays, [x + y for x, y in zip(g1, g2)], state, lr)
            if not all(np.isfinite(a).all() for a in arrays):
                raise DivergenceError(f"non-finite parameters at epoch {epoch}, batch {b}", epoch, b)
            total_loss += value
            step += 1
        history.append(EpochStats(epoch, total_loss / n_batches, lr))
        log.debug("epoch %d loss %.6f lr %.3g", epoch, history[-1].mean_loss, lr)
    return history


def write_loss_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "lr"])
        for h in history:
            writer.writerow([h.epoch, repr(h.mean_loss), repr(h.lr)])


def stratified_subsample(train, samples_per_class, seed):
    """Up to ``samples_per_class`` rows from each class, drawn without replacement."""
    if samples_per_class < 1:
        raise ConfigError("samples_per_class must be >= 1")
    if len(train) == 0:
        raise DataError("cannot subsample an empty dataset")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed % 2**64, 0x5AB])))
    picked = []
    for c in range(train.n_classes):
        rows = np.flatnonzero(train.labels == c)
        if len(rows) == 0:
            continue
        picked.append(rng.choice(rows, size=min(len(rows), samples_per_class), replace=False))
    return train.subset(np.sort(np.concatenate(picked)))


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_prob = shifted - log_norm
    n = len(labels)
    value = -log_prob[np.arange(n), labels].mean()
    grad = np.exp(log_prob)
    grad[np.arange(n), labels] -= 1.0
    return float(value), grad / n


def finetune(params, head, labeled_subset, config, seed=0):
    """Train encoder and head jointly with cross-entropy at a constant learning rate.

    Inputs are not modified; returns ``(params, head, epoch_losses)``.
    """
    if len(np.unique(labeled_subset.labels)) < 2:
        raise DataError("fine-tuning needs at least two classes in the labelled subset")
    if head.n_classes < labeled_subset.n_classes:
        raise DataError("head has fewer outputs than the dataset has classes")
    params = params.copy()
    head = head.copy()
    arrays = params.arrays() + [head.weight, head.bias]
    state = AdamWState.zeros_like(arrays, weight_decay=config.weight_decay)
    x, y = labeled_subset.features, labeled_subset.labels
    losses = []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for idx in batch_indices(len(y), config.batch_size, seed, epoch):
            z, cache = forward(params, x[idx])
            value, g_logits = cross_entropy(head.logits(z), y[idx])
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite fine-tuning loss at epoch {epoch}", epoch)
            g_w = np.asarray(z, dtype=np.float64).T @ g_logits
            g_b = g_logits.sum(axis=0)
            g_z = g_logits @ head.weight.astype(np.float64).T
            grads = backward(params, cache, g_z).arrays() + [g_w, g_b]
            adamw_step(arrays, grads, state, config.lr)
            total += value * len(idx)
            count += len(idx)
        losses.append(total / count)
    return params, head, losses


def predict(params, head, features):
    from .inference import encode
    return np.argmax(head.logits(encode(params, features)), axis=1)


@dataclass
class FinetuneResult:
    seed: int
    macro_f1: float
    n_train: int
    params: object = None
    head: object = None


def finetune_runs(params, train, test, config, samples_per_class=None, keep_models=False):
    """Repeat subsample-and-fine-tune over ``config.seeds``; macro-F1 on ``test`` per seed."""
    from .metrics import macro_f1
    k = samples_per_class or config.samples_per_class
    results = []
    for seed in config.seeds:
        subset = stratified_subsample(train, k, seed)
        head = ClassifierHead.zeros(params.weights[-1].shape[1], train.n_classes)
        p, h, _ = finetune(params, head, subset, config, seed)
        preds = predict(p, h, test.features)
        result = FinetuneResult(seed, macro_f1(preds, test.labels, train.n_classes), len(subset))
        if keep_models:
            result.params, result.head = p, h
        results.append(result)
    return results
