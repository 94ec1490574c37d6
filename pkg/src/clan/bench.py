"""Per-sample inference timing: cached-centroid scoring vs exhaustive nearest neighbour."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .inference import BenignCentroid, centroid_of_latents, knn_baseline_score, score
from .model import MlpConfig, init


@dataclass
class BenchRow:
    method: str
    n_train: int
    seconds_per_sample: float
    ratio: float  # against the smallest n_train for the same method


def _best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def benchmark_inference(sizes=(1_000, 100_000), n_queries=256, input_width=16,
                        mlp_config=None, metric="cosine", repeats=5, seed=0):
    """Time both scorers against cached training sets of each size.

    The training latents are random Gaussian vectors standing in for a
    cached encoded training set; the encoder and the queries are shared by
    every configuration so only ``n_train`` varies.
    """
    config = mlp_config or MlpConfig(input_width, seed=seed)
    params = init(config)
    rng = np.random.default_rng(seed)
    queries = rng.uniform(-1, 1, size=(n_queries, config.input_width)).astype(np.float32)
    setups = []
    for n in sizes:
        latents = rng.normal(size=(n, config.latent_width)).astype(np.float32)
        centroid = BenignCentroid(centroid_of_latents(latents, metric), metric, 1.0)
        score(params, centroid, queries)  # warm-up
        knn_baseline_score(params, latents, queries[:1], metric)
        setups.append((n, centroid, latents))
    best_c = {n: float("inf") for n in sizes}
    best_k = {n: float("inf") for n in sizes}
    # interleaved rounds so drift in machine speed hits every size alike
    for _ in range(repeats):
        for n, centroid, latents in setups:
            best_c[n] = min(best_c[n], _best_time(lambda: score(params, centroid, queries), 3))
            best_k[n] = min(best_k[n], _best_time(
                lambda: knn_baseline_score(params, latents, queries, metric), 1))
    rows = []
    for n in sizes:
        rows.append(BenchRow("centroid", n, best_c[n] / n_queries, 1.0))
        rows.append(BenchRow("knn", n, best_k[n] / n_queries, 1.0))
    for method in ("centroid", "knn"):
        mine = [r for r in rows if r.method == method]
        base = min(mine, key=lambda r: r.n_train).seconds_per_sample
        for r in mine:
            r.ratio = r.seconds_per_sample / base
    return rows


def format_bench(rows):
    lines = [f"{'method':<10}{'n_train':>10}{'us/sample':>14}{'ratio':>10}"]
    for r in rows:
        lines.append(f"{r.method:<10}{r.n_train:>10}{r.seconds_per_sample * 1e6:>14.2f}{r.ratio:>10.2f}")
    return "\n".join(lines)
