import numpy as np
import pytest

from bedexit.nn import ops, serialize
from bedexit.nn.models import (ConvLSTMConfig, ConvLSTMModel, FCNConfig, FCNModel, apply_channels,
                               convlstm_windows, fcn_windows, fit_channel_stats, valid_conv_lengths)
from bedexit.nn.optim import Adam
from bedexit.nn.tensor import Tensor
from bedexit.nn.train import TrainConfig, nn_train, tbptt_gradients

import gradcheck
from conftest import make_record


@pytest.mark.parametrize("name", sorted(gradcheck.OPS))
def test_op_gradients(name):
    errs = gradcheck.op_errors(name, n_shapes=20)
    assert len(errs) == 20
    assert max(errs) < 1e-4


def test_lr_loss_gradient():
    assert max(gradcheck.lr_errors(20)) < 1e-6


def test_identity_kernel_conv_is_identity():
    x = np.random.default_rng(0).normal(size=(2, 3, 7))
    w = np.zeros((3, 3, 3))
    for c in range(3):
        w[c, c, 1] = 1.0
    out = ops.conv1d(Tensor(x), Tensor(w), Tensor(np.zeros(3)), stride=1, padding=1)
    np.testing.assert_array_equal(out.data, x)


def test_maxpool_same_length_and_ties():
    x = Tensor(np.array([[[1.0, 3.0, 3.0, 2.0]]]), requires_grad=True)
    out = ops.maxpool1d(x, 3, 1, 1)
    assert out.data.tolist() == [[[3.0, 3.0, 3.0, 3.0]]]
    out.backward(np.ones(out.shape))
    # ties route the gradient to the first maximal position in each window
    assert x.grad.tolist() == [[[0.0, 3.0, 1.0, 0.0]]]


def test_dropout_identity_at_inference():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert ops.dropout(x, 0.5, None, training=False) is x
    with pytest.raises(ValueError):
        ops.dropout(x, 0.5, None, training=True)


def test_valid_conv_lengths():
    assert valid_conv_lengths(20, ConvLSTMConfig()) == [20, 9, 4, 1]
    m = ConvLSTMModel(seed=0)
    feats = m.conv_features(np.zeros((3, 4, 20)))
    assert feats.shape == (3, 40, 1)


def test_fcn_output_matches_window():
    m = FCNModel(seed=0)
    out = m.forward(np.random.default_rng(1).normal(size=(5, 4, 10)))
    assert out.shape == (5, 2, 10)
    with pytest.raises(ValueError):
        m.forward(np.zeros((5, 4, 12)))


def test_zero_weights_give_half():
    m = FCNModel(seed=0)
    m.load_state_dict({k: np.zeros_like(v) for k, v in m.state_dict().items()})
    p = m.predict_proba(np.random.default_rng(2).normal(size=(3, 4, 10)))
    np.testing.assert_allclose(p, 0.5)


def test_fcn_batch_permutation_equivariant():
    m = FCNModel(seed=3)
    x = np.random.default_rng(4).normal(size=(6, 4, 10))
    perm = np.array([3, 0, 5, 1, 4, 2])
    np.testing.assert_allclose(m.predict_proba(x)[perm], m.predict_proba(x[perm]), rtol=0, atol=1e-12)


def test_adam_zero_lr_keeps_parameters():
    p = np.random.default_rng(5).normal(size=(4, 3))
    before = p.copy()
    opt = Adam([p], lr=0.0)
    for _ in range(5):
        opt.step([np.ones_like(p)])
    assert p.tobytes() == before.tobytes()


def _toy_streams(n_streams=4, length=120, seed=0):
    """Streams where the label is visible in the RSSI channel."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_streams):
        y = (np.sin(np.arange(length) / 9.0 + rng.uniform(0, 6)) > 0).astype(np.int64)
        ch = rng.normal(0, 0.3, size=(length, 4))
        ch[:, 2] += 2.0 * y - 1.0
        out.append((ch, y))
    return out


def test_fcn_loss_decreases():
    streams = _toy_streams()
    m = FCNModel(seed=0)
    res = nn_train(m, streams, cfg=TrainConfig(max_epochs=8, patience=8, seed=0, fcn_stride=2))
    losses = [tr for _, tr, _ in res.curve]
    assert losses[-1] < losses[0]


def test_fcn_overfits_small_set():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 4, 10))
    y = rng.integers(0, 2, size=(20, 10))
    m = FCNModel(FCNConfig(dropout=0.0), seed=0)
    opt = Adam([p.data for p in m.parameters()], lr=3e-3)
    for _ in range(300):
        for p in m.parameters():
            p.grad = None
        loss = m.loss(x, y)
        loss.backward()
        opt.step([p.grad for p in m.parameters()])
    acc = np.mean(m.predict_proba(x).argmax(-1) == y)
    assert acc >= 0.95


def _small_lstm():
    return ConvLSTMModel(ConvLSTMConfig(filters=6, hidden=5, unroll=40), seed=1)


def test_tbptt_equals_full_gradient_for_short_sequences():
    m = _small_lstm()
    rng = np.random.default_rng(3)
    w = rng.normal(size=(37, 4, 20))
    y = rng.integers(0, 2, size=37)
    tb = tbptt_gradients(m, w, y, unroll=40)
    for p in m.parameters():
        p.grad = None
    loss, _, _ = m.loss(w[None], y[None])
    loss.backward()
    for k, v in m.params.items():
        np.testing.assert_allclose(tb[k], v.grad, rtol=1e-10, atol=1e-12)


def test_streaming_matches_batched_forward():
    m = _small_lstm()
    w = np.random.default_rng(4).normal(size=(25, 4, 20))
    logits, _, _ = m.forward(w[None])
    p_batch = ops.softmax(logits.data[0])[:, 1]
    p_stream = m.stream(0).run(w)
    np.testing.assert_allclose(p_stream, p_batch, rtol=1e-10, atol=1e-12)


def test_stream_reset_is_deterministic():
    m = _small_lstm()
    w = np.random.default_rng(5).normal(size=(30, 4, 20))
    s = m.stream(7)
    a = s.run(w)
    s.reset()
    b = s.run(w)
    assert a.tobytes() == b.tobytes()


def test_stream_refuses_other_patient():
    s = _small_lstm().stream(1)
    with pytest.raises(RuntimeError):
        s.run(np.zeros((2, 4, 20)), patient_id=2)


def test_convlstm_windows_one_per_reading():
    ch = np.arange(20.0).reshape(5, 4)
    w = convlstm_windows(ch, 20)
    assert w.shape == (5, 4, 20)
    np.testing.assert_array_equal(w[4, :, -1], ch[4])
    np.testing.assert_array_equal(w[0, :, 0], ch[0])


def test_fcn_windows_stride():
    ch = np.zeros((25, 4))
    x, y = fcn_windows(ch, np.zeros(25, dtype=int), 10, 5)
    assert x.shape == (4, 4, 10) and y.shape == (4, 10)


def test_training_is_bit_identical():
    streams = _toy_streams(seed=1)
    cfg = TrainConfig(max_epochs=3, seed=11)
    a, b = FCNModel(seed=2), FCNModel(seed=2)
    ra = nn_train(a, streams[:3], streams[3:], cfg)
    rb = nn_train(b, streams[:3], streams[3:], cfg)
    assert ra.curve == rb.curve
    assert all(a.state_dict()[k].tobytes() == b.state_dict()[k].tobytes() for k in a.params)


def test_convlstm_training_runs_and_is_deterministic():
    streams = _toy_streams(n_streams=3, length=100, seed=2)
    cfg = TrainConfig(max_epochs=2, seed=0, minibatch=4)
    a, b = _small_lstm(), _small_lstm()
    ra = nn_train(a, streams, cfg=cfg)
    rb = nn_train(b, streams, cfg=cfg)
    assert ra.curve == rb.curve and np.isfinite(ra.curve[-1][1])


def test_unknown_model_type():
    with pytest.raises(TypeError):
        nn_train(object(), _toy_streams(1))


def test_serialize_round_trip(tmp_path):
    m = FCNModel(seed=9)
    path = tmp_path / "m.bxm"
    serialize.save(path, "fcn", {"mode": "tag"}, m.state_dict())
    kind, meta, arrays = serialize.load(path)
    assert kind == "fcn" and meta == {"mode": "tag"}
    for k, v in m.state_dict().items():
        assert arrays[k].tobytes() == v.tobytes()
    assert serialize.dumps("fcn", {"mode": "tag"}, m.state_dict()) == path.read_bytes()


def test_serialize_rejects_garbage():
    with pytest.raises(serialize.ModelFormatError):
        serialize.loads(b"not a model")


def test_load_state_dict_checks_shapes():
    m = FCNModel(seed=0)
    bad = m.state_dict()
    bad["out.w"] = np.zeros((1, 1, 1))
    with pytest.raises(ValueError):
        m.load_state_dict(bad)


def test_channel_stats_and_layout():
    rec = make_record(np.arange(6.0), antenna=[1, 2, 3, 1, 2, 3], rssi=[-50, -52, -54, -56, -58, -60],
                      tag=[1, 2, 1, 2, 1, 2])
    st = fit_channel_stats([rec.readings], "idsensor", (1, 2, 3))
    ch = apply_channels(rec.readings, st)
    assert ch.shape == (6, 4)
    assert ch[:, 0].tolist() == [-1, 1, -1, 1, -1, 1]
    assert ch[:, 1].tolist() == [-1, 0, 1, -1, 0, 1]
    assert abs(ch[:, 2].mean()) < 1e-12
    st_tag = fit_channel_stats([rec.readings], "tag", (1, 2, 3))
    assert not apply_channels(rec.readings, st_tag)[:, 0].any()
