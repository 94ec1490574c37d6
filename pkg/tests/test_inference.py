import math

import numpy as np
import pytest

from clan.errors import ContractError, CorruptCheckpointError, DataError
from clan.inference import (
    BenignCentroid,
    calibrate_partition_constant,
    classify,
    compute_centroid,
    encode,
    knn_baseline_score,
    load_centroid,
    save_centroid,
    score,
)
from clan.model import MlpConfig, init
from clan.numerics import pairwise_distance
from clan.pipeline import Scaler


@pytest.fixture
def params():
    return init(MlpConfig(4, 16, 2, 3, seed=8))


def test_centroid_single_sample(params, rng):
    x = rng.normal(size=(1, 4)).astype(np.float32)
    c = compute_centroid(params, x, metric="squared_euclidean")
    np.testing.assert_array_equal(c.mu0, encode(params, x)[0])


def test_centroid_two_samples_midpoint(params, rng):
    x = rng.normal(size=(2, 4)).astype(np.float32)
    z = encode(params, x).astype(np.float64)
    c = compute_centroid(params, x, metric="squared_euclidean")
    np.testing.assert_allclose(c.mu0, (z[0] + z[1]) / 2, rtol=1e-6)


def test_centroid_matches_streaming_mean(params, rng):
    x = rng.normal(size=(1000, 4)).astype(np.float32)
    z = encode(params, x)
    running = [0.0] * 3
    for n, row in enumerate(z, start=1):
        for i in range(3):
            running[i] += (float(row[i]) - running[i]) / n
    c = compute_centroid(params, x, metric="squared_euclidean")
    np.testing.assert_allclose(c.mu0, running, atol=1e-5, rtol=1e-5)


def test_cosine_centroid_is_unit_mean_direction(params, rng):
    x = rng.normal(size=(50, 4)).astype(np.float32)
    z = encode(params, x).astype(np.float64)
    u = z / np.linalg.norm(z, axis=1, keepdims=True)
    expected = u.mean(axis=0) / np.linalg.norm(u.mean(axis=0))
    c = compute_centroid(params, x, metric="cosine")
    np.testing.assert_allclose(c.mu0, expected, rtol=1e-6, atol=1e-7)


def test_centroid_empty(params):
    with pytest.raises(DataError):
        compute_centroid(params, np.empty((0, 4), np.float32))


def test_calibrated_quantile_maps_to_half(params, rng):
    x = rng.normal(size=(500, 4)).astype(np.float32)
    c = compute_centroid(params, x, metric="squared_euclidean", quantile=0.9)
    d = score(params, c, x).distance
    prob_q = math.exp(-np.quantile(d, 0.9)) / c.partition_constant
    assert prob_q == pytest.approx(0.5, rel=1e-5)
    assert np.mean(classify(score(params, c, x).prob_benign) == 0) == pytest.approx(0.9, abs=0.01)
    assert calibrate_partition_constant([0.0, 0.0], 0.5) == 2.0


def test_score_at_centroid_gives_inverse_z(params, rng):
    x = rng.normal(size=(1, 4)).astype(np.float32)
    for metric in ("squared_euclidean", "cosine"):
        c = compute_centroid(params, x, metric=metric, partition_constant=1.7)
        rec = score(params, c, x[0])
        assert rec.distance == pytest.approx(0.0, abs=1e-6)
        assert rec.prob_benign == pytest.approx(1 / 1.7, rel=1e-6)
        assert rec.predicted_label == 0


def test_score_closed_form_half(params):
    c = BenignCentroid(np.zeros(3, np.float32), "squared_euclidean", 1.0)
    p = identity_net()
    rec = score(p, c, np.array([math.sqrt(math.log(2)), 0.0, 0.0]))
    assert rec.distance == pytest.approx(math.log(2), rel=1e-15)
    assert rec.prob_benign == pytest.approx(0.5, rel=1e-15)


def test_score_matches_scalar_oracle(params, rng):
    x = rng.normal(size=(20, 4)).astype(np.float32)
    c = compute_centroid(params, x, metric="cosine")
    batch = score(params, c, x)
    z = encode(params, x).astype(np.float64)
    for i in range(20):
        d = float(pairwise_distance(z[i:i + 1], c.mu0[None, :].astype(np.float64), "cosine")[0, 0])
        assert batch.prob_benign[i] == pytest.approx(math.exp(-d) / c.partition_constant, abs=1e-6)


def test_batch_equals_per_sample(params, rng):
    x = rng.normal(size=(30, 4)).astype(np.float32)
    c = compute_centroid(params, x[:10])
    batch = score(params, c, x)
    for i in range(30):
        rec = score(params, c, x[i])
        assert rec.distance == pytest.approx(batch.distance[i], rel=1e-6, abs=1e-9)
        assert rec.predicted_label == batch.predicted_label[i]


def test_prob_strictly_decreasing_in_distance():
    d = np.linspace(0, 5, 100)
    prob = np.exp(-d) / 1.3
    assert np.all(np.diff(prob) < 0)


def identity_net():
    p = init(MlpConfig(3, 4, 1, 3)).zeros_like().astype(np.float64)
    for w in p.weights:
        w[:3, :3] = np.eye(3)
    return p


@pytest.mark.parametrize("metric", ["squared_euclidean", "cosine"])
def test_centroid_with_small_z_is_benign(metric, rng):
    p = identity_net()
    x = np.abs(rng.normal(size=(5, 3))) + 0.1  # positive so the ReLU layer passes it through
    for z in (0.5, 1.0, 1.99):
        c = compute_centroid(p, x, metric=metric, partition_constant=z)
        assert score(p, c, c.mu0.astype(np.float64)).predicted_label == 0


def test_metric_mismatch(params, rng):
    c = compute_centroid(params, rng.normal(size=(5, 4)).astype(np.float32), metric="cosine")
    with pytest.raises(ContractError):
        score(params, c, np.zeros(4, np.float32), metric="squared_euclidean")


def test_classify_threshold():
    assert classify(0.6) == 0
    assert classify(0.5) == 1
    assert classify(0.2) == 1
    assert classify(np.nextafter(0.5, 1)) == 0
    assert classify(np.array([0.7, 0.5])).tolist() == [0, 1]
    with pytest.raises(ValueError):
        classify(-0.1)


# nearest-neighbour baseline

def test_knn_self_match(params, rng):
    x = rng.normal(size=(10, 4)).astype(np.float32)
    base = encode(params, x)
    assert knn_baseline_score(params, base, x[3], "squared_euclidean") == 0.0


def test_knn_single_latent(params, rng):
    x = rng.normal(size=(2, 4)).astype(np.float32)
    z = encode(params, x)
    d = knn_baseline_score(params, z[:1], x[1], "squared_euclidean")
    assert d == pytest.approx(float(np.sum((z[0].astype(np.float64) - z[1]) ** 2)), rel=1e-6)


def test_knn_matches_exhaustive_scan(params, rng):
    base = rng.normal(size=(50, 3)).astype(np.float32)
    x = rng.normal(size=(7, 4)).astype(np.float32)
    z = encode(params, x).astype(np.float64)
    for metric in ("squared_euclidean", "cosine"):
        got = knn_baseline_score(params, base, x, metric)
        for i in range(7):
            oracle = min(float(pairwise_distance(z[i:i + 1], base[j:j + 1].astype(np.float64), metric)[0, 0])
                         for j in range(50))
            assert got[i] == pytest.approx(oracle, rel=1e-5, abs=1e-6)


def test_knn_empty(params):
    with pytest.raises(DataError):
        knn_baseline_score(params, np.empty((0, 3)), np.zeros(4))


# cache file

def test_centroid_cache_round_trip(tmp_path, params, rng):
    scaler = Scaler(np.array([0.0, 1.0, -2.0, 3.0]), np.array([1.0, 1.0, 2.0, 8.0]))
    c = compute_centroid(params, rng.normal(size=(9, 4)).astype(np.float32), scaler=scaler)
    save_centroid(c, tmp_path / "c")
    back = load_centroid(tmp_path / "c")
    assert back.metric == c.metric and back.partition_constant == c.partition_constant
    assert back.quantile == c.quantile
    assert back.mu0.tobytes() == c.mu0.tobytes()
    np.testing.assert_array_equal(back.scaler.maximum, scaler.maximum)


def test_centroid_cache_corruption(tmp_path, params):
    c = BenignCentroid(np.ones(3, np.float32), "cosine", 1.0)
    save_centroid(c, tmp_path / "c")
    data = (tmp_path / "c").read_bytes()
    (tmp_path / "t").write_bytes(data[:-2])
    with pytest.raises(CorruptCheckpointError):
        load_centroid(tmp_path / "t")
