import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clan.errors import (
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    CorruptCheckpointError,
    DimensionError,
)
from clan.model import (
    MlpConfig,
    backward,
    forward,
    init,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from clan.pipeline import Scaler
from clan.trainer import ClassifierHead

from conftest import central_diff, rel_err


def scalar_forward(params, x):
    """Per-unit loops: linear projection, ReLU hidden layers, linear output."""
    h = [float(v) for v in x]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for k in range(w.shape[0]):
                s += h[k] * float(w[k, j])
            out.append(max(s, 0.0) if 0 < i < last else s)
        h = out
    return np.array(h)


def random_net(rng, f=None, d_model=None, depth=None, d_head=None):
    f = f or int(rng.integers(1, 9))
    d_model = d_model or int(rng.integers(3, 17))
    d_head = d_head or int(rng.integers(1, min(5, d_model)))
    depth = depth or int(rng.integers(1, 4))
    config = MlpConfig(f, d_model, depth, d_head, seed=int(rng.integers(2**32)))
    params = init(config).astype(np.float64)
    # non-zero biases so the test covers them too
    for b in params.biases:
        b[...] = rng.normal(scale=0.3, size=b.shape)
    return config, params


def kink_free_batch(rng, params, f, batch, margin=1e-2):
    """Resample rows until no hidden pre-activation sits near the ReLU kink."""
    x = rng.normal(size=(batch, f))
    for _ in range(1000):
        _, cache = forward(params, x)
        near = np.zeros(batch, dtype=bool)
        for pre in cache.pre[1:-1]:
            near |= (np.abs(pre) < margin).any(axis=1)
        if not near.any():
            return x
        x[near] = rng.normal(size=(near.sum(), f))
    raise RuntimeError("could not draw a kink-free batch")


# init

def test_init_deterministic():
    c = MlpConfig(5, 16, 2, 4, seed=99)
    a, b = init(c), init(c)
    for x, y in zip(a.arrays(), b.arrays()):
        assert x.tobytes() == y.tobytes()


def test_init_biases_zero_and_weights_bounded():
    p = init(MlpConfig(4, 8, 1, 2, seed=1))
    assert all(np.all(b == 0) for b in p.biases)
    assert p.weights[0].shape == (4, 8)
    assert np.all(np.abs(p.weights[0]) <= np.sqrt(6 / 4))
    assert p.weights[0].dtype == np.float32


def test_init_layer_count():
    p = init(MlpConfig(4, 8, 3, 2))
    assert [w.shape for w in p.weights] == [(4, 8), (8, 8), (8, 8), (8, 8), (8, 2)]


@pytest.mark.parametrize("kwargs", [
    dict(input_width=0), dict(input_width=3, hidden_width=0), dict(input_width=3, hidden_layers=0),
    dict(input_width=3, hidden_width=4, latent_width=4), dict(input_width=3, latent_width=0),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        MlpConfig(**kwargs)


# forward

def test_zero_params_give_zero_latents():
    p = init(MlpConfig(3, 6, 2, 2)).zeros_like()
    z, _ = forward(p, np.ones((4, 3), np.float32))
    assert np.all(z == 0)


def test_single_row_equals_batch_row(rng):
    p = init(MlpConfig(6, 12, 2, 3, seed=3))
    x = rng.normal(size=(5, 6)).astype(np.float32)
    z, _ = forward(p, x)
    z2, _ = forward(p, x[2])
    np.testing.assert_array_equal(z2[0], z[2])


def test_forward_matches_scalar_oracle(rng):
    p = init(MlpConfig(4, 8, 3, 3, seed=11))
    for b in p.biases:
        b[...] = rng.normal(scale=0.2, size=b.shape)
    x = rng.normal(size=(5, 4)).astype(np.float32)
    z, _ = forward(p, x)
    for i in range(5):
        np.testing.assert_allclose(z[i], scalar_forward(p, x[i]), atol=1e-5, rtol=1e-5)


def test_forward_width_mismatch():
    with pytest.raises(DimensionError):
        forward(init(MlpConfig(3, 6, 1, 2)), np.ones((2, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forward_permutation_equivariant_and_relu_nonnegative(seed):
    rng = np.random.default_rng(seed)
    _, p = random_net(rng)
    x = rng.normal(size=(6, p.weights[0].shape[0]))
    perm = rng.permutation(6)
    z, cache = forward(p, x)
    zp, _ = forward(p, x[perm])
    # BLAS blocking may differ in the last float64 ulp between row positions
    np.testing.assert_allclose(zp, z[perm], rtol=1e-12, atol=1e-14)
    z2, _ = forward(p, x)
    assert z2.tobytes() == z.tobytes()
    for a in cache.inputs[2:]:
        assert np.all(a >= 0)


# backward

def test_zero_upstream_gives_zero_gradients(rng):
    p = init(MlpConfig(4, 8, 2, 3))
    z, cache = forward(p, rng.normal(size=(3, 4)))
    g = backward(p, cache, np.zeros_like(z))
    assert all(np.all(a == 0) for a in g.arrays())


def test_backward_matches_finite_differences_on_20_nets(rng):
    for _ in range(20):
        config, p = random_net(rng)
        batch = int(rng.integers(1, 7))
        x = kink_free_batch(rng, p, config.input_width, batch)
        upstream = rng.normal(size=(batch, config.latent_width))
        z, cache = forward(p, x)
        grads = backward(p, cache, upstream)
        objective = lambda: float(np.sum(upstream * forward(p, x)[0]))
        for param, g in zip(p.arrays(), grads.arrays()):
            fd = central_diff(objective, param, 1e-3)
            assert rel_err(g, fd).max() < 1e-4


def test_duplicated_rows_double_the_gradient(rng):
    p = init(MlpConfig(4, 8, 2, 3, seed=5)).astype(np.float64)
    x = rng.normal(size=(1, 4))
    up = rng.normal(size=(1, 3))
    g1 = backward(p, forward(p, x)[1], up)
    g2 = backward(p, forward(p, np.vstack([x, x]))[1], np.vstack([up, up]))
    for a, b in zip(g1.arrays(), g2.arrays()):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-14)


def test_backward_rejects_foreign_cache(rng):
    p = init(MlpConfig(4, 8, 2, 3))
    q = init(MlpConfig(4, 8, 1, 3))
    _, cache = forward(q, rng.normal(size=(2, 4)))
    with pytest.raises(ContractError):
        backward(p, cache, np.zeros((2, 3)))
    _, cache = forward(p, rng.normal(size=(2, 4)))
    with pytest.raises(ContractError):
        backward(p, cache, np.zeros((3, 3)))


# checkpoints

def test_checkpoint_round_trip_bitwise(tmp_path, rng):
    config = MlpConfig(5, 10, 2, 4, seed=-3)
    p = init(config)
    for b in p.biases:
        b[...] = rng.normal(size=b.shape)
    path = tmp_path / "m.ckpt"
    save_checkpoint(p, config, path)
    q, c2 = load_checkpoint(path)
    assert c2 == config
    for a, b in zip(p.arrays(), q.arrays()):
        assert a.tobytes() == b.tobytes()


def test_checkpoint_with_scaler_and_head(tmp_path):
    config = MlpConfig(3, 6, 1, 2)
    scaler = Scaler(np.array([0.0, -1.0, 2.0]), np.array([1.0, 1.0, 2.0]))
    head = ClassifierHead(np.arange(6, dtype=np.float32).reshape(2, 3), np.ones(3, np.float32))
    save_checkpoint(init(config), config, tmp_path / "m", scaler=scaler, head=head)
    ck = read_checkpoint(tmp_path / "m")
    np.testing.assert_array_equal(ck.scaler.minimum, scaler.minimum)
    np.testing.assert_array_equal(ck.head.weight, head.weight)
    np.testing.assert_array_equal(ck.head.bias, head.bias)


def test_checkpoint_header_layout(tmp_path):
    config = MlpConfig(2, 4, 1, 1, seed=7)
    save_checkpoint(init(config), config, tmp_path / "m")
    data = (tmp_path / "m").read_bytes()
    assert data[:8] == b"CLANCKPT"
    assert struct.unpack_from("<HHI", data, 8) == (1, 0, 0)
    assert struct.unpack_from("<5q", data, 16) == (2, 4, 1, 1, 7)
    assert struct.unpack_from("<III", data, 56) == (6, 2, 4)


def test_truncated_checkpoint(tmp_path):
    config = MlpConfig(3, 6, 1, 2)
    save_checkpoint(init(config), config, tmp_path / "m")
    data = (tmp_path / "m").read_bytes()
    for cut in (0, 10, 40, len(data) - 1):
        (tmp_path / "t").write_bytes(data[:cut])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(tmp_path / "t")


def test_bad_magic_and_trailing_bytes(tmp_path):
    config = MlpConfig(3, 6, 1, 2)
    save_checkpoint(init(config), config, tmp_path / "m")
    data = (tmp_path / "m").read_bytes()
    (tmp_path / "a").write_bytes(b"XXXXXXXX" + data[8:])
    (tmp_path / "b").write_bytes(data + b"\0")
    for name in "ab":
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(tmp_path / name)


def test_version_bump(tmp_path):
    config = MlpConfig(3, 6, 1, 2)
    save_checkpoint(init(config), config, tmp_path / "m")
    data = bytearray((tmp_path / "m").read_bytes())
    data[8] += 1
    (tmp_path / "v").write_bytes(bytes(data))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "v")


def test_shape_mismatch(tmp_path):
    config = MlpConfig(3, 6, 1, 2)
    save_checkpoint(init(config), config, tmp_path / "m")
    data = bytearray((tmp_path / "m").read_bytes())
    struct.pack_into("<q", data, 16, 4)  # claim input width 4; stored tensors still say 3
    (tmp_path / "s").write_bytes(bytes(data))
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(tmp_path / "s")
