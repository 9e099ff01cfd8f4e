import math
from dataclasses import replace

import numpy as np
import pytest

from hazecast.metrics import (
    all_metrics,
    baselines,
    count_flops_params,
    dense_cost,
    fit_linear,
    linear_forecast,
    mae,
    persistence_forecast,
    r2,
    rmse,
)
from hazecast.retnet import RetNetConfig, init_params

import oracles


def test_forecast_examples(rng):
    y = rng.normal(size=20)
    assert all_metrics(y, y) == {"rmse": 0.0, "mae": 0.0, "r2": 1.0}
    assert r2(y, np.full_like(y, y.mean())) == pytest.approx(0.0, abs=1e-12)
    assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))
    assert mae([0, 0], [3, 4]) == 3.5
    assert r2(y, -y) < 0


def test_r2_constant_actuals():
    assert r2([2, 2], [2, 2]) == 1.0
    assert math.isnan(r2([2, 2], [2, 3]))


def test_rmse_bounds_mae(rng):
    for _ in range(50):
        y, yhat = rng.normal(size=15), rng.normal(size=15)
        assert rmse(y, yhat) >= mae(y, yhat) >= 0


def test_dense_cost():
    assert dense_cost(3, 2) == (14, 8)


def _tiny(**kw):
    base = dict(d=8, h=2, L=1, ffn_dim=16, input_len=4, n_vars=3, conv_channels=(4, 6), horizon=1)
    base.update(kw)
    return RetNetConfig(**base)


@pytest.mark.parametrize("kw", [{}, {"L": 3, "h": 4, "horizon": 4}, {"d": 16, "input_len": 12}])
def test_flops_double_entry(kw):
    cfg = _tiny(**kw)
    flops, params = count_flops_params(cfg)
    c1, c2 = cfg.conv_channels
    args = (cfg.d, cfg.h, cfg.L, cfg.ffn_dim, cfg.n_vars, c1, c2, cfg.kernel_width, cfg.horizon)
    assert flops == oracles.count_ops(cfg.input_len, *args)
    assert params == oracles.count_params(*args)
    assert params == init_params(cfg, 0).n_scalars()


def test_doubling_d_costs_more():
    cfg = _tiny()
    f1, p1 = count_flops_params(cfg)
    f2, p2 = count_flops_params(replace(cfg, d=16))
    assert f2 > f1 and p2 > p1


def test_baselines():
    X = np.ones((10, 5, 2)) * 3.0
    Y = np.full((10, 1), 3.0)
    assert baselines((X, Y), (X, Y))["persistence"]["rmse"] == 0
    # pure linear trend: target continues the ramp
    t = np.arange(60, dtype=float)
    X = np.stack([np.stack([t[i:i + 5], 2 * t[i:i + 5]], axis=1) for i in range(50)])
    Y = t[5:55, None] * 1.5
    coef = fit_linear(X[:40], Y[:40])
    assert rmse(Y[40:], linear_forecast(coef, X[40:])) < 1e-8
    # persistence error equals the step size right after a step
    X = np.zeros((1, 4, 1))
    assert mae([2.5], persistence_forecast(X, 1)) == 2.5
