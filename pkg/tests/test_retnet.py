import math

import numpy as np
import pytest

from hazecast import autodiff as ad
from hazecast.errors import OddHeadDim, StateStepMismatch, ValidationError
from hazecast.retnet import (
    HyperParams,
    RetNetConfig,
    RetNetParams,
    apply_rotation,
    cnn_frontend,
    decay_vector,
    ffn,
    forecast_head,
    init_params,
    initial_state,
    model_forward,
    msr_layer,
    predict,
    retention_chunkwise,
    retention_parallel,
    retention_recurrent,
    retention_recurrent_sequence,
    retnet_forward,
    rotation_angles,
    train_model,
)


def _weights(rng, d, dh):
    return [rng.normal(size=(d, dh)) / math.sqrt(d) for _ in range(3)]


def test_decay_values():
    np.testing.assert_array_equal(decay_vector(1), [0.96875])
    np.testing.assert_array_equal(decay_vector(4), [0.96875, 0.984375, 0.9921875, 0.99609375])
    g = decay_vector(32)
    assert np.all((g > 0) & (g < 1))


def test_rotation_properties(rng):
    x = rng.normal(size=(6, 8))
    np.testing.assert_array_equal(apply_rotation(x, np.zeros(4)).data, x)
    theta = rotation_angles(8)
    back = apply_rotation(apply_rotation(x, theta, 1), theta, -1).data
    np.testing.assert_allclose(back, x, atol=1e-12)
    y = apply_rotation(x, theta).data
    np.testing.assert_allclose(np.hypot(y[:, ::2], y[:, 1::2]), np.hypot(x[:, ::2], x[:, 1::2]), atol=1e-12)


def test_rotation_gives_relative_scores(rng):
    theta = rotation_angles(4)
    q, k = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    s1 = float((apply_rotation(q, theta, 1, 5).data @ apply_rotation(k, theta, 1, 2).data.T)[0, 0])
    s2 = float((apply_rotation(q, theta, 1, 9).data @ apply_rotation(k, theta, 1, 6).data.T)[0, 0])
    assert s1 == pytest.approx(s2, abs=1e-12)


def test_single_step_has_no_decay(rng):
    W = _weights(rng, 4, 4)
    x = rng.normal(size=(1, 4))
    theta = rotation_angles(4)
    out = retention_parallel(x, 0.9, theta, *W).data
    q = apply_rotation(x @ W[0], theta).data
    k = apply_rotation(x @ W[1], theta).data
    np.testing.assert_allclose(out, q @ k.T @ (x @ W[2]), atol=1e-14)
    o, state = retention_recurrent(x, initial_state(4), 0.9, theta, *W)
    np.testing.assert_allclose(o.data, out, atol=1e-14)
    assert state.step == 1


def test_zero_decay_keeps_diagonal(rng):
    W = _weights(rng, 4, 4)
    X = rng.normal(size=(5, 4))
    theta = rotation_angles(4)
    out = retention_parallel(X, 0.0, theta, *W).data
    for n in range(5):
        ref = retention_parallel(X[n:n + 1], 0.0, theta, *W).data  # position differs, scores do not
        q = apply_rotation(X[n:n + 1] @ W[0], theta, 1, n + 1).data
        k = apply_rotation(X[n:n + 1] @ W[1], theta, 1, n + 1).data
        np.testing.assert_allclose(out[n], (q @ k.T @ (X[n:n + 1] @ W[2]))[0], atol=1e-12)
        np.testing.assert_allclose(out[n], ref[0], atol=1e-12)


def test_unit_decay_grows_linearly(rng):
    W = _weights(rng, 4, 4)
    X = np.tile(rng.normal(size=(1, 4)), (6, 1))
    out = retention_recurrent_sequence(X, 1.0, np.zeros(2), *W).data
    np.testing.assert_allclose(out, np.arange(1, 7)[:, None] * out[0], atol=1e-12)


def test_forms_agree(rng):
    W = _weights(rng, 8, 8)
    theta = rotation_angles(8)
    X = rng.normal(size=(32, 8))
    par = retention_parallel(X, 0.97, theta, *W).data
    np.testing.assert_allclose(retention_recurrent_sequence(X, 0.97, theta, *W).data, par, atol=1e-10)
    np.testing.assert_allclose(retention_chunkwise(X, 0.97, theta, *W, b=32).data, par, atol=1e-10)
    np.testing.assert_allclose(retention_chunkwise(X, 0.97, theta, *W, b=1).data, par, atol=1e-10)
    X8 = X[:8]
    np.testing.assert_allclose(retention_chunkwise(X8, 0.97, theta, *W, b=3).data,
                               retention_parallel(X8, 0.97, theta, *W).data, atol=1e-9)


def test_recurrent_step_mismatch(rng):
    W = _weights(rng, 4, 4)
    with pytest.raises(StateStepMismatch):
        retention_recurrent(rng.normal(size=(1, 4)), initial_state(4), 0.9, rotation_angles(4), *W, n=3)


def test_config_validation():
    with pytest.raises(OddHeadDim):
        RetNetConfig(d=6, h=2)
    with pytest.raises(ValidationError):
        RetNetConfig(d=8, h=3)


def _tiny(**kw):
    base = dict(d=8, h=2, L=1, ffn_dim=16, input_len=12, n_vars=4, conv_channels=(4, 6))
    base.update(kw)
    return RetNetConfig(**base)


def test_msr_shape_and_zero_projection(rng):
    cfg = _tiny()
    p = init_params(cfg, 0).arrays
    X = rng.normal(size=(5, 8))
    assert msr_layer(X, p, "layers.0.", cfg).shape == (5, 8)
    p0 = dict(p, **{"layers.0.wo": np.zeros((8, 8))})
    np.testing.assert_array_equal(msr_layer(X, p0, "layers.0.", cfg).data, 0)


def test_ffn_examples():
    np.testing.assert_array_equal(ffn(np.zeros((2, 3)), np.ones((3, 4)), np.ones((4, 3))).data, 0)
    np.testing.assert_array_equal(ffn(np.ones((2, 3)), np.ones((3, 4)), np.zeros((4, 3))).data, 0)
    out = ffn(np.array([[1.0, 1.0]]), np.array([[1.0], [1.0]]), np.array([[1.0]])).data
    assert out[0, 0] == pytest.approx(1.9546, abs=1e-4)


def test_stack_residual_paths(rng):
    X0 = rng.normal(size=(6, 8))
    cfg0 = _tiny(L=0)
    np.testing.assert_array_equal(retnet_forward(X0, cfg0, {}).data, X0)
    cfg = _tiny(L=2)
    zeros = {k: np.zeros_like(v) for k, v in init_params(cfg, 0).arrays.items()}
    np.testing.assert_array_equal(retnet_forward(X0, cfg, zeros).data, X0)


def test_full_forward_forms_agree(rng):
    cfg = _tiny(L=2, chunk_b=5)
    p = init_params(cfg, 3).arrays
    X = rng.normal(size=(3, 12, 4))
    par = model_forward(p, cfg, X, "parallel").data
    np.testing.assert_allclose(model_forward(p, cfg, X, "recurrent").data, par, atol=1e-8)
    np.testing.assert_allclose(model_forward(p, cfg, X, "chunkwise").data, par, atol=1e-8)


def test_frontend_shape_causality_and_zero(rng):
    cfg = _tiny()
    p = init_params(cfg, 1).arrays
    w = rng.normal(size=(12, 4))
    base = cnn_frontend(w, p).data
    assert base.shape == (12, 8)
    w2 = w.copy()
    w2[7] += 1
    np.testing.assert_array_equal(cnn_frontend(w2, p).data[:7], base[:7])
    zero = {k: np.zeros_like(v) for k, v in p.items()}
    np.testing.assert_array_equal(cnn_frontend(w, zero).data, 0)


def test_head_constant():
    p = {"head.weight": np.zeros((8, 1)), "head.bias": np.array([0.3])}
    out = forecast_head(np.random.default_rng(0).normal(size=(12, 8)), p).data
    np.testing.assert_array_equal(out, [0.3])


def test_msr_gradient(rng):
    cfg = _tiny()
    p = init_params(cfg, 2).arrays
    names = ["layers.0.wq", "layers.0.wk", "layers.0.wv", "layers.0.wg", "layers.0.wo"]
    X = rng.normal(size=(4, 8))

    def f(v):
        return ad.mean(msr_layer(v["X"], {**p, **v}, "layers.0.", cfg))

    assert ad.grad_check_many(f, {"X": X, **{n: p[n] for n in names}}) < 1e-4


def test_full_model_gradient(rng):
    cfg = _tiny()
    params = init_params(cfg, 4)
    X = rng.normal(size=(2, 12, 4))
    Y = rng.normal(size=(2, 1))

    def f(v):
        return ad.mse(model_forward({**params.arrays, **v}, cfg, X), Y)

    assert ad.grad_check_many(f, {k: params[k] for k in params.trainable()}) < 1e-4


def test_params_roundtrip(tmp_path):
    cfg = _tiny()
    p = init_params(cfg, 0)
    p.save(tmp_path, {"hyper": HyperParams().to_dict()})
    back, meta = RetNetParams.load(tmp_path)
    assert back.cfg == cfg
    assert meta["hyper"]["batch"] == 32
    for k in p.arrays:
        np.testing.assert_array_equal(back[k], p[k])


def test_training_learns_constant_and_is_deterministic(rng):
    cfg = _tiny()
    X = rng.random((64, 12, 4))
    Y = np.full((64, 1), 0.4)
    hyper = HyperParams(lr=3e-3, batch=16, epochs=60, patience=None)
    p1, h1 = train_model((X, Y), [], cfg, hyper, seed=5)
    p2, h2 = train_model((X, Y), [], cfg, hyper, seed=5)
    assert h1["train_loss"] == h2["train_loss"]
    assert h1["final_train_mse"] < 1e-3
    np.testing.assert_array_equal(predict(p1, X), predict(p2, X))


def test_validation_loss_running_min_is_monotone(rng):
    cfg = _tiny()
    t = np.arange(200) * 0.3
    series = np.sin(t) * 0.5 + 0.5
    X = np.stack([np.repeat(series[i:i + 12, None], 4, axis=1) for i in range(180)])
    Y = series[12:192, None]
    hyper = HyperParams(lr=3e-3, batch=32, epochs=15)
    params, hist = train_model((X[:140], Y[:140]), (X[140:], Y[140:]), cfg, hyper, seed=0)
    best = np.minimum.accumulate(hist["val_loss"])
    assert np.all(np.diff(best) <= 0)
    # returned parameters are those of the best epoch
    vl = float(np.mean((predict(params, X[140:]) - Y[140:]) ** 2))
    assert vl == pytest.approx(min(hist["val_loss"]), rel=1e-12)
