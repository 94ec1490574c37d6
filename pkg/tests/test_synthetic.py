import numpy as np
import pytest

from clan.synthetic import SIGMA, generate_synthetic


def test_counts():
    ds = generate_synthetic(100, 31, 4, seed=1)
    assert np.sum(ds.labels == 0) == 100
    assert ds.class_counts().tolist() == [100, 11, 10, 10]
    assert ds.class_names[0] == "BENIGN"


def test_benign_rows_near_a_benign_mean():
    ds = generate_synthetic(500, 10, 6, seed=2)
    benign = ds.features[ds.labels == 0].astype(np.float64)
    assert np.all(np.abs(ds.benign_means) <= 0.5)
    dist = np.abs(benign[:, None, :] - ds.benign_means[None]).max(axis=2).min(axis=1)
    assert np.all(dist <= 0.5 + 6 * SIGMA + 1e-6)


def test_attack_means_far_from_benign():
    ds = generate_synthetic(10, 10, 5, seed=3, n_attack_classes=4)
    d = np.linalg.norm(ds.attack_means[:, None, :] - ds.benign_means[None], axis=2)
    assert np.all(d >= 1.5)


def test_deterministic():
    a = generate_synthetic(50, 20, 3, seed=9)
    b = generate_synthetic(50, 20, 3, seed=9)
    c = generate_synthetic(50, 20, 3, seed=10)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.features.tobytes() != c.features.tobytes()


def test_needs_two_features():
    with pytest.raises(ValueError):
        generate_synthetic(10, 10, 1, seed=0)
