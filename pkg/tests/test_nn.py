import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import CHECKS, numeric, rel
from stemgenre.errors import ConfigError, DataError, LabelError, ShapeError
from stemgenre.nn import layers as L
from stemgenre.nn.models import (AccompNetConfig, MLPConfig, VocalNetConfig, build_model, forward_accomp,
                                 forward_vocal)
from stemgenre.nn.serialize import load_model, save_model
from stemgenre.nn.train import TrainConfig, loss_and_grads, train
from stemgenre.errors import StaleArtifact

SMALL_VOCAL = VocalNetConfig(hidden_per_direction=4, dense_sizes=(8, 6, 5), features=6, frames=7)
SMALL_ACCOMP = AccompNetConfig(conv_channels=(3, 2, 2, 2), dense_hidden=5, input_shape=(1, 16, 18))


# -- layers: hand examples ------------------------------------------------------

def test_dense_identity():
    y, _ = L.dense_forward(np.array([[1.0, 2.0]]), np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(y, [[1.0, 2.0]])


def test_dense_wrong_width():
    with pytest.raises(ShapeError):
        L.dense_forward(np.ones((1, 3)), np.eye(2), np.zeros(2))


def test_conv_ones_kernel_counts_neighbours():
    y, _ = L.conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
    np.testing.assert_array_equal(y[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 1, 5, 6))
    K = np.zeros((1, 1, 3, 3))
    K[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(L.conv2d_forward(x, K, np.zeros(1))[0], x)


def test_conv_matches_loop_correlation():
    rng = np.random.default_rng(1)
    x, K, b = rng.normal(size=(2, 3, 5, 4)), rng.normal(size=(2, 3, 3, 3)), rng.normal(size=2)
    y, _ = L.conv2d_forward(x, K, b)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(y)
    for n in range(2):
        for o in range(2):
            for i in range(5):
                for j in range(4):
                    ref[n, o, i, j] = np.sum(xp[n, :, i:i + 3, j:j + 3] * K[o]) + b[o]
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_maxpool_basic_and_shape():
    y, _ = L.maxpool2d_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    np.testing.assert_array_equal(y, [[[[4.0]]]])
    assert L.maxpool2d_forward(np.zeros((1, 1, 40, 132)))[0].shape == (1, 1, 20, 66)


def test_maxpool_tie_goes_top_left():
    _, cache = L.maxpool2d_forward(np.full((1, 1, 2, 2), 3.0))
    dx = L.maxpool2d_backward(np.ones((1, 1, 1, 1)), cache)
    np.testing.assert_array_equal(dx[0, 0], [[1, 0], [0, 0]])


def test_bilstm_zero_everything():
    H = 3
    zeros = [np.zeros((2, 4 * H)), np.zeros((H, 4 * H)), np.zeros(4 * H)]
    y, _ = L.bilstm_forward(np.zeros((5, 2)), zeros, zeros)
    assert y.shape == (5, 2 * H)
    np.testing.assert_array_equal(y, 0.0)


def test_bilstm_reversal_swaps_halves():
    rng = np.random.default_rng(2)
    T, F, H = 6, 3, 4
    p = [rng.normal(scale=0.5, size=s) for s in ((F, 4 * H), (H, 4 * H), (4 * H,))]
    q = [rng.normal(scale=0.5, size=s) for s in ((F, 4 * H), (H, 4 * H), (4 * H,))]
    x = rng.normal(size=(T, F))
    y, _ = L.bilstm_forward(x, p, q)
    # with the directions' parameters exchanged, reversing time swaps the halves
    y_rev, _ = L.bilstm_forward(x[::-1], q, p)
    np.testing.assert_allclose(y_rev[::-1, :H], y[:, H:], atol=1e-12)
    np.testing.assert_allclose(y_rev[::-1, H:], y[:, :H], atol=1e-12)


def test_lstm_against_scalar_loop():
    rng = np.random.default_rng(3)
    T, F, H = 4, 2, 3
    Wx, Wh, b = rng.normal(size=(F, 4 * H)), rng.normal(size=(H, 4 * H)), rng.normal(size=4 * H)
    x = rng.normal(size=(1, T, F))
    out, _ = L.lstm_forward(x, Wx, Wh, b)
    sig = lambda v: 1 / (1 + np.exp(-v))
    h, c = np.zeros(H), np.zeros(H)
    for t in range(T):
        z = x[0, t] @ Wx + h @ Wh + b
        i, f, o, g = sig(z[:H]), sig(z[H:2 * H]), sig(z[2 * H:3 * H]), np.tanh(z[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        np.testing.assert_allclose(out[0, t], h, atol=1e-12)


def test_softmax_ce_uniform():
    loss, d = L.softmax_cross_entropy(np.zeros(10), 3)
    assert np.isclose(loss, np.log(10), atol=1e-12)
    assert np.isclose(loss, 2.302585, atol=1e-6)
    expected = np.full(10, 0.1)
    expected[3] -= 1
    assert d.shape == (10,)
    np.testing.assert_allclose(d, expected, atol=1e-15)


def test_softmax_ce_large_logit():
    z = np.zeros(10)
    z[0] = 1000.0
    loss, d = L.softmax_cross_entropy(z, 0)
    assert np.isfinite(loss) and loss < 1e-12
    assert np.all(np.isfinite(d))


def test_softmax_ce_gradient_tight():
    rng = np.random.default_rng(4)
    z, y = rng.normal(size=(3, 10)), np.array([1, 5, 9])
    _, d = L.softmax_cross_entropy(z, y)
    num = numeric(lambda: L.softmax_cross_entropy(z, y)[0], z)
    assert rel(d, num) <= 1e-8


def test_softmax_ce_bad_label():
    with pytest.raises(LabelError):
        L.softmax_cross_entropy(np.zeros(10), 10)


@settings(max_examples=200)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.just(10)), elements=st.floats(-700, 700)))
def test_softmax_is_distribution(z):
    p = L.softmax(z)
    assert np.all(p >= 0) and np.all(p <= 1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_layer_gradients(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    assert max(CHECKS[name](rng) for _ in range(10)) <= 1e-5


# -- networks --------------------------------------------------------------------

def test_parameter_counts():
    acc = build_model("accomp", rng=0)
    assert acc.params["conv0.W"].size + acc.params["conv0.b"].size == 64 * 9 + 64 == 640
    # conv: 640 + (32*64*9+32) + (32*32*9+32) + (16*32*9+16); flatten 16*2*8=256 -> 64 -> 10
    assert acc.param_count() == 640 + 18464 + 9248 + 4624 + (256 * 64 + 64) + (64 * 10 + 10) == 50074
    voc = build_model("vocal", rng=0)
    lstm0 = 2 * (40 * 1024 + 256 * 1024 + 1024)
    lstm1 = 2 * (512 * 1024 + 256 * 1024 + 1024)
    dense = (512 * 256 + 256) + (256 * 128 + 128) + (128 * 32 + 32) + (32 * 10 + 10)
    assert voc.param_count() == lstm0 + lstm1 + dense == 2351850


@pytest.mark.parametrize("kind,cfg,shape", [("vocal", SMALL_VOCAL, (6, 7)), ("accomp", SMALL_ACCOMP, (16, 18))])
def test_forward_is_distribution_and_deterministic(kind, cfg, shape):
    net = build_model(kind, cfg, rng=5)
    x = np.random.default_rng(6).normal(size=shape)
    fwd = forward_vocal if kind == "vocal" else forward_accomp
    p = fwd(x, net)
    assert p.shape == (10,)
    assert abs(p.sum() - 1.0) <= 1e-9
    np.testing.assert_array_equal(p, fwd(x, net))


@pytest.mark.parametrize("kind,cfg,shape,out", [("vocal", SMALL_VOCAL, (3, 6, 7), "dense3"),
                                                ("accomp", SMALL_ACCOMP, (3, 16, 18), "dense1")])
def test_output_row_permutation(kind, cfg, shape, out):
    net = build_model(kind, cfg, rng=7)
    net.params[out + ".b"] = np.arange(10) * 0.1
    x = np.random.default_rng(8).normal(size=shape)
    p = net.predict_proba(x)
    perm = np.random.default_rng(9).permutation(10)
    net2 = build_model(kind, cfg, rng=7)
    net2.params[out + ".W"] = net2.params[out + ".W"][:, perm]
    net2.params[out + ".b"] = (np.arange(10) * 0.1)[perm]
    np.testing.assert_allclose(net2.predict_proba(x), p[:, perm], atol=1e-15)


@pytest.mark.parametrize("kind,cfg,shape", [("vocal", SMALL_VOCAL, (3, 6, 7)), ("accomp", SMALL_ACCOMP, (2, 16, 18)),
                                            ("mlp", MLPConfig(inputs=5, hidden=(4,)), (4, 5))])
def test_network_gradients(kind, cfg, shape):
    rng = np.random.default_rng(10)
    net = build_model(kind, cfg, rng=11)
    # nonzero biases keep ReLU pre-activations away from the kink
    for k in net.params:
        if k.endswith(".b"):
            net.params[k] = rng.normal(scale=0.3, size=net.params[k].shape)
    X, y = rng.normal(size=shape), rng.integers(0, 10, size=shape[0])
    _, grads = loss_and_grads(net, X, y, l2=1e-3, train=False)
    f = lambda: loss_and_grads(net, X, y, l2=1e-3, train=False)[0]
    for name in ("dense0.W", "dense0.b") + (("lstm0.fwd.Wh", "lstm1.bwd.b") if kind == "vocal" else ()) \
            + (("conv0.W", "conv3.b") if kind == "accomp" else ()):
        assert rel(grads[name], numeric(f, net.params[name])) <= 1e-5, name


def test_overfit_toy_set():
    rng = np.random.default_rng(12)
    X = np.concatenate([rng.normal(-1, 0.5, size=(10, 4)), rng.normal(1, 0.5, size=(10, 4))])
    y = np.repeat([0, 1], 10)
    cfg = TrainConfig(learning_rate=1e-2, epochs=200, batch_size=20, l2=0.0, early_stop_patience=None,
                      val_fraction=0.0)
    net, hist = train("mlp", (X, y), cfg, MLPConfig(inputs=4, hidden=(16,)))
    assert (net.predict_proba(X).argmax(axis=1) == y).mean() == 1.0
    assert len(hist) == 200


def test_large_l2_shrinks_weights():
    rng = np.random.default_rng(13)
    X, y = rng.normal(size=(40, 6)), rng.integers(0, 3, size=40)
    norms = []
    for l2 in (0.0, 1e3):
        cfg = TrainConfig(learning_rate=1e-2, epochs=20, l2=l2, early_stop_patience=None, seed=3)
        net, _ = train("mlp", (X, y), cfg, MLPConfig(inputs=6, hidden=(8,)))
        norms.append(sum(np.sum(net.params[k] ** 2) for k in net.weight_names()))
    assert norms[1] < norms[0]


def test_training_deterministic():
    rng = np.random.default_rng(14)
    X, y = rng.normal(size=(30, 6, 7)), np.tile(np.arange(3), 10)
    cfg = TrainConfig(epochs=3, seed=5)
    a, ha = train("vocal", (X, y), cfg, SMALL_VOCAL)
    b, hb = train("vocal", (X, y), cfg, SMALL_VOCAL)
    assert ha == hb
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_small_steps_descend():
    rng = np.random.default_rng(15)
    net = build_model("accomp", SMALL_ACCOMP, rng=1)
    X, y = rng.normal(size=(8, 16, 18)), rng.integers(0, 10, size=8)
    losses = []
    for _ in range(6):
        loss, grads = loss_and_grads(net, X, y, train=False)
        losses.append(loss)
        for k, g in grads.items():
            net.params[k] -= 1e-3 * g
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_early_stopping_restores_best():
    rng = np.random.default_rng(16)
    X, y = rng.normal(size=(60, 5)), rng.integers(0, 2, size=60)
    cfg = TrainConfig(learning_rate=5e-2, epochs=100, early_stop_patience=3, l2=0.0)
    net, hist = train("mlp", (X, y), cfg, MLPConfig(inputs=5, hidden=(32,)))
    best = min(hist, key=lambda h: h["val_loss"])
    assert best["best"] and sum(h["best"] for h in hist) == 1
    assert len(hist) < 100 and hist[-1]["epoch"] - best["epoch"] == 3


def test_train_rejects_bad_data():
    with pytest.raises(DataError):
        train("mlp", (np.zeros((0, 5)), np.zeros(0, dtype=int)), TrainConfig(), MLPConfig(inputs=5))
    with pytest.raises(DataError):
        train("mlp", (np.full((4, 5), np.nan), np.zeros(4, dtype=int)), TrainConfig(), MLPConfig(inputs=5))
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)


def test_model_save_load(tmp_path):
    net = build_model("vocal", SMALL_VOCAL, rng=3)
    net.fit_input_stats(np.random.default_rng(0).normal(size=(5, 6, 7)))
    save_model(tmp_path / "m", net, seed=3)
    back = load_model(tmp_path / "m")
    x = np.random.default_rng(1).normal(size=(2, 6, 7))
    np.testing.assert_array_equal(back.predict_proba(x), net.predict_proba(x))
    with pytest.raises(StaleArtifact):
        load_model(tmp_path / "m", expected_hash="0" * 64)
