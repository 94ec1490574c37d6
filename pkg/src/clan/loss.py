"""Contrastive objectives on latent batches.

Both losses return ``(value, grad_z, grad_other)``; gradients are exact
(sub)gradients computed in float64 and returned in the latent dtype.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import METRICS, pairwise_distance, pairwise_distance_grad


@dataclass(frozen=True)
class LossConfig:
    metric: str = "cosine"
    margin: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not 0.0 < self.margin <= 1.0:
            raise ConfigError(f"margin must lie in (0, 1], got {self.margin}")
        if not self.temperature > 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


def _check_pair(z, other):
    z = np.asarray(z)
    other = np.asarray(other)
    if z.ndim != 2 or z.shape != other.shape:
        raise DimensionError(f"latent batches must share a 2-D shape, got {z.shape} and {other.shape}")
    if z.shape[0] < 1:
        raise DimensionError("empty latent batch")
    return z, other


def clan_loss(z, z_tilde, config):
    """CLAN objective for a batch of benign latents and their augmented views.

    value = (1/B) sum_a [ sum_{p != a} d(z_a, z_p) + sum_n max(0, m - d(z_a, z~_n)) ]

    The negative sum runs over every augmented row, including ``n == a``.
    The hinge subgradient is zero at ``d == m``.
    """
    z, z_tilde = _check_pair(z, z_tilde)
    B = z.shape[0]
    z64 = z.astype(np.float64)
    zt64 = z_tilde.astype(np.float64)
    d_pos = pairwise_distance(z64, z64, config.metric)
    d_neg = pairwise_distance(z64, zt64, config.metric)

    off_diag = 1.0 - np.eye(B)
    slack = config.margin - d_neg
    value = (np.sum(d_pos * off_diag) + np.sum(np.maximum(slack, 0.0))) / B

    w_pos = off_diag / B
    ga, gb = pairwise_distance_grad(z64, z64, w_pos, config.metric)
    grad_z = ga + gb
    w_neg = -(slack > 0.0).astype(np.float64) / B
    ga, grad_zt = pairwise_distance_grad(z64, zt64, w_neg, config.metric)
    grad_z += ga
    return float(value), grad_z.astype(z.dtype), grad_zt.astype(z.dtype)


def ntxent_baseline_loss(z, z_pos, config):
    """Positive-pair contrastive objective used by augmentation-as-positive methods.

    value = -(1/B) sum_a log( exp(-d(z_a, zp_a)/tau) / sum_j exp(-d(z_a, z_j)/tau) )

    The denominator runs over all in-batch anchors, ``j == a`` included.
    """
    z, z_pos = _check_pair(z, z_pos)
    B = z.shape[0]
    tau = config.temperature
    z64 = z.astype(np.float64)
    zp64 = z_pos.astype(np.float64)
    d_zz = pairwise_distance(z64, z64, config.metric)
    d_pair = np.einsum("ii->i", pairwise_distance(z64, zp64, config.metric))

    logits = -d_zz / tau
    row_max = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - row_max)
    lse = row_max[:, 0] + np.log(exp.sum(axis=1))
    value = np.mean(d_pair / tau + lse)

    softmax = exp / exp.sum(axis=1, keepdims=True)
    ga, gb = pairwise_distance_grad(z64, z64, -softmax / (B * tau), config.metric)
    grad_z = ga + gb
    ga, grad_zp = pairwise_distance_grad(z64, zp64, np.eye(B) / (B * tau), config.metric)
    grad_z += ga
    return float(value), grad_z.astype(z.dtype), grad_zp.astype(z.dtype)


LOSSES = {"clan": clan_loss, "ntxent_baseline": ntxent_baseline_loss}
