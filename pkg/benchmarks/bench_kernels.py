"""Compiled vs numpy kernels: pairwise distances, nearest-neighbour scans, one training step.

    python benchmarks/bench_kernels.py [--repeats N]

Reports the best wall time over ``--repeats`` runs for each backend and the
speed-up of the compiled kernels. Without the compiled extension only the
numpy column is filled.
"""
import argparse
import time

import numpy as np

from clan import numerics
from clan.augmentation import AugmentConfig, augment
from clan.loss import LossConfig, clan_loss
from clan.model import MlpConfig, backward, forward, init


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def train_step(backend, params, batch, aug):
    # the loss calls the active backend, so swap it for the whole step
    saved = numerics._backend
    numerics._backend = numerics.get_backend(backend)
    try:
        view = augment(batch, aug, 0)
        z, cache = forward(params, batch)
        zv, cache_v = forward(params, view)
        _, gz, gzv = clan_loss(z, zv, LossConfig())
        backward(params, cache, gz)
        backward(params, cache_v, gzv)
    finally:
        numerics._backend = saved


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    batch = rng.normal(size=(256, 32)).astype(np.float32)
    base = rng.normal(size=(100_000, 32)).astype(np.float32)
    queries = rng.normal(size=(64, 32)).astype(np.float32)
    params = init(MlpConfig(16, seed=0))
    x = rng.uniform(-1, 1, size=(256, 16)).astype(np.float32)
    aug = AugmentConfig()

    cases = [
        ("pairwise sq-euclidean 256x256", lambda b: numerics.pairwise_sq_euclidean(batch, batch, b)),
        ("pairwise cosine 256x256", lambda b: numerics.pairwise_cosine_distance(batch, batch, b)),
        ("nn scan sq-euclidean 64 vs 100k", lambda b: numerics.min_distance(queries, base, "squared_euclidean", b)),
        ("nn scan cosine 64 vs 100k", lambda b: numerics.min_distance(queries, base, "cosine", b)),
        ("train step B=256 (cosine)", lambda b: train_step(b, params, x, aug)),
    ]
    backends = ["python"] + (["compiled"] if numerics.BACKEND == "compiled" else [])
    print(f"{'kernel':<34}{'numpy ms':>12}{'compiled ms':>14}{'speed-up':>10}")
    for name, fn in cases:
        times = {b: best_of(lambda: fn(b), args.repeats) for b in backends}
        comp = times.get("compiled")
        cols = f"{times['python'] * 1e3:>12.3f}"
        cols += f"{comp * 1e3:>14.3f}{times['python'] / comp:>10.2f}" if comp else f"{'-':>14}{'-':>10}"
        print(f"{name:<34}{cols}")


if __name__ == "__main__":
    main()
