"""Seeded Gaussian-cluster flow data for desk-scale experiments."""
from __future__ import annotations

import numpy as np

from .pipeline import FlowDataset

SIGMA = 0.1
N_BENIGN_CLUSTERS = 3
MIN_MALICIOUS_RADIUS = 1.5


def _noise(rng, n, f, sigma):
    # clipped at 6 sigma so the construction bound holds exactly
    return np.clip(rng.normal(0.0, sigma, size=(n, f)), -6 * sigma, 6 * sigma)


def generate_synthetic(n_benign, n_malicious, f, seed, n_attack_classes=3, sigma=SIGMA):
    """Benign rows from three clusters in [-0.5, 0.5]^f; attack classes far away.

    Each attack class is one Gaussian whose mean lies at L2 distance of at
    least 1.5 from every benign mean. Rows are ordered benign first, then
    by attack class.
    """
    if f < 2:
        raise ValueError("need at least two features")
    if n_attack_classes == 0 and n_malicious:
        raise ValueError("malicious rows requested with no attack classes")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed % 2**64)))
    benign_means = rng.uniform(-0.5, 0.5, size=(N_BENIGN_CLUSTERS, f))
    cluster = rng.integers(0, N_BENIGN_CLUSTERS, size=n_benign)
    benign = benign_means[cluster] + _noise(rng, n_benign, f, sigma)

    attack_means = []
    while len(attack_means) < n_attack_classes:
        cand = rng.uniform(-2.0, 2.0, size=f)
        if np.min(np.linalg.norm(benign_means - cand, axis=1)) >= MIN_MALICIOUS_RADIUS:
            attack_means.append(cand)
    sizes = np.full(n_attack_classes, n_malicious // max(n_attack_classes, 1))
    sizes[: n_malicious % max(n_attack_classes, 1)] += 1
    malicious = [m + _noise(rng, k, f, sigma) for m, k in zip(attack_means, sizes)]

    features = np.vstack([benign] + malicious) if n_attack_classes else benign
    labels = np.concatenate([np.zeros(n_benign, dtype=np.int64)]
                            + [np.full(k, c + 1, dtype=np.int64) for c, k in enumerate(sizes)])
    names = ["BENIGN"] + [f"ATTACK_{c + 1}" for c in range(n_attack_classes)]
    ds = FlowDataset(features.astype(np.float32), labels, names, [f"f{i}" for i in range(f)])
    ds.benign_means = benign_means
    ds.attack_means = np.asarray(attack_means)
    return ds
